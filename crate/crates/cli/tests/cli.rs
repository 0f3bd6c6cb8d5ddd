use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_headforge");
/// Keeps face fits short; the smoke tests only need the pipeline to run.
const QUICK_FACE: [&str; 6] = ["--set", "face_iterations=20", "--set", "landmark_warmup=20", "--set", "appearance_warmup=20"];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).unwrap()
}

fn small_scene(dir: &Path) {
    ok(dir, &["synth-model", "--seed", "1", "--subdiv", "3", "--k-id", "6", "--k-exp", "3", "--k-tex", "6", "-o", "m.p3dm"]);
    ok(dir, &["synth-scene", "--seed", "2", "--model", "m.p3dm", "--size", "64", "-o", "scene"]);
}

#[test]
fn synth_model_then_fit_face_writes_a_result_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-model", "--seed", "1", "-o", "m.p3dm"]);
    ok(d, &["synth-scene", "--seed", "1", "--model", "m.p3dm", "--size", "64", "-o", "scene"]);
    let mut args = vec!["fit-face", "--scene", "scene", "--model", "m.p3dm", "-o", "face"];
    args.extend(QUICK_FACE);
    let stdout = ok(d, &args);
    assert!(stdout.starts_with("energy "), "{stdout}");
    for f in ["params.cfg", "report.cfg", "render.png", "f.png", "face_depth.dpth", "face.obj"] {
        assert!(d.join("face").join(f).is_file(), "{f}");
    }
}

#[test]
fn unknown_flags_are_rejected_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["synth-model", "--sed", "1", "-o", "x"][..], &["frobnicate"], &["eval", "--pred", "a"]] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_line(&out)["error"], "usage");
    }
}

#[test]
fn runtime_failures_are_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["render", "--assets", "absent", "-o", "x.png"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e["error"], "not_found");
    assert!(e["message"].as_str().unwrap().contains("No such file"));
    let out = run(dir.path(), &["fit-face", "--scene", "absent", "--set", "no_such_key=1", "-o", "f"]);
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--help"]);
    for cmd in ["synth-model", "synth-scene", "fit-face", "fit-depth", "fit-depth-single", "render", "rotate", "fill", "eval", "gradcheck", "serve"] {
        assert!(out.contains(cmd), "{cmd}");
    }
}

#[test]
fn eval_of_identical_bundles_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    let out = ok(dir.path(), &["eval", "--pred", "scene/view1", "--gt", "scene/view1"]);
    assert_eq!(out.trim(), "face 0.000 non-face 0.000");
}

#[test]
fn gradcheck_passes_on_the_losses_module() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--module", "losses"]);
    assert_eq!(out.lines().count(), 10);
    assert!(out.lines().all(|l| l.contains(" ok ")), "{out}");
}

#[test]
fn config_file_overrides_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    std::fs::write(d.join("fit.cfg"), "face_iterations = 5\nlandmark_warmup = 5\nappearance_warmup = 5\ndepth_iterations = 7\n").unwrap();
    ok(d, &["fit-face", "--scene", "scene", "--config", "fit.cfg", "--set", "face_iterations=3", "--trace", "t.csv", "-o", "face"]);
    let trace = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(trace.starts_with("iteration,"));
    assert_eq!(trace.lines().count(), 4, "{trace}");
    let out = ok(d, &["fit-depth", "--scene", "scene", "--config", "fit.cfg", "--set", "coarse_to_fine=false", "--trace", "d.csv", "-o", "depth"]);
    assert!(out.contains("iterations 7"), "{out}");
    assert_eq!(std::fs::read_to_string(d.join("d.csv")).unwrap().lines().count(), 8);
    let out = run(d, &["fit-depth", "--scene", "scene", "--set", "depth_iterations", "-o", "x"]);
    assert_eq!(error_line(&out)["error"], "usage");
}

#[test]
fn depth_stages_write_views_reports_and_assets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    let quick = ["--set", "depth_iterations=30"];
    let mut args = vec!["fit-depth", "--scene", "scene", "-o", "depth"];
    args.extend(quick);
    ok(d, &args);
    for f in ["view1/depth.dpth", "view2/depth.dpth", "view1/s.png", "report.cfg", "assets/head.cfg", "assets/hair.obj"] {
        assert!(d.join("depth").join(f).is_file(), "{f}");
    }
    let out = ok(d, &["eval", "--pred", "depth/view1", "--gt", "scene/view1"]);
    assert!(out.starts_with("face ") && out.contains(" non-face "), "{out}");
    let mut args = vec!["fit-depth-single", "--scene", "scene", "--view", "2", "-o", "single"];
    args.extend(quick);
    ok(d, &args);
    assert!(d.join("single/depth.dpth").is_file() && d.join("single/assets/face.obj").is_file());
    let mut args = vec!["fit-depth", "--scene", "scene", "--plane-init", "--set", "w_face=0", "--set", "w_layer=0", "-o", "ablation"];
    args.extend(quick);
    ok(d, &args);
}

#[test]
fn rotate_render_and_fill_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    ok(d, &["fit-depth", "--scene", "scene", "-o", "depth"]);
    let out = ok(d, &["rotate", "--assets", "depth/assets", "--yaw", "10", "-o", "rot"]);
    assert!(out.starts_with("coverage "));
    for f in ["image.png", "holes.png", "assets/head.cfg"] {
        assert!(d.join("rot").join(f).is_file(), "{f}");
    }
    let holes = headforge::Mask::load_png(d.join("rot/holes.png")).unwrap();
    if !holes.is_empty() {
        let note = std::fs::read_to_string(d.join("rot/filled.filled.cfg")).unwrap();
        assert!(note.contains(&format!("filled_pixels = {}", holes.count())), "{note}");
        assert_eq!(headforge::Mask::load_png(d.join("rot/filled.filled.png")).unwrap(), holes);
    }
    ok(d, &["render", "--assets", "rot/assets", "--yaw", "-10", "--holes", "back_holes.png", "-o", "back.png"]);
    let back = headforge::Image::load_png(d.join("back.png")).unwrap();
    let source = headforge::Image::load_png(d.join("depth/assets/image.png")).unwrap();
    let s = headforge::Mask::load_png(d.join("depth/assets/s.png")).unwrap();
    let back_holes = headforge::Mask::load_png(d.join("back_holes.png")).unwrap();
    let mutual = s.minus(&holes).minus(&back_holes);
    let mae = back.mae_over(&source, &mutual).unwrap();
    assert!(mae < 4.0 / 255.0, "{mae}");

    ok(d, &["fill", "--image", "rot/image.png", "--mask", "rot/holes.png", "-o", "filled.png"]);
    let note = std::fs::read_to_string(d.join("filled.filled.cfg")).unwrap();
    assert!(note.contains("method = harmonic"));
    let filled = headforge::Image::load_png(d.join("filled.png")).unwrap();
    let raw = headforge::Image::load_png(d.join("rot/image.png")).unwrap();
    let outside = headforge::Mask::full(filled.width(), filled.height()).minus(&holes);
    assert_eq!(filled.mae_over(&raw, &outside).unwrap(), 0.0);
}

#[test]
fn fill_rejects_mismatched_mask() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    headforge::Image::filled(8, 8, [0.5; 3]).save_png(d.join("i.png")).unwrap();
    headforge::Mask::full(4, 4).save_png(d.join("m.png")).unwrap();
    let out = run(d, &["fill", "--image", "i.png", "--mask", "m.png", "-o", "o.png"]);
    assert_eq!(out.status.code(), Some(1));
    error_line(&out);
}

fn http(port: u16, request: &str) -> String {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut buf = Vec::new();
    s.read_to_end(&mut buf).unwrap();
    String::from_utf8_lossy(&buf).into_owned()
}

#[test]
fn serve_binds_the_configured_port_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_scene(d);
    ok(d, &["fit-depth", "--scene", "scene", "--set", "depth_iterations=5", "-o", "depth"]);
    std::fs::write(d.join("service.cfg"), format!("assets = {}\nport = 1\n", d.join("depth/assets").display())).unwrap();
    let mut child = Command::new(BIN)
        .arg("serve")
        .env("HEADFORGE_CONFIG", d.join("service.cfg"))
        .env("PORT", "0")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let port: u16 = line.trim().rsplit(':').next().unwrap().parse().unwrap();
    let head = http(port, "GET /head HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    let bad = http(port, "POST /render HTTP/1.1\r\nHost: x\r\nContent-Length: 1\r\nConnection: close\r\n\r\n{");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    assert!(head.contains("\"width\":64"), "{head}");
    assert!(bad.starts_with("HTTP/1.1 400"), "{bad}");
}
