use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

use star_core::cloud::{read_pcd_file, write_pcd_file};
use star_core::{scenario, Point3, PointCloud, Rgb, UnitQuaternion};
use star_review::client::scripted_review;
use star_review::config::ExclusionFile;
use star_review::log::replay_dir;
use star_review::SessionState;

fn star(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_star"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STAR_PORT")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).map(str::trim))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
}

const RUST: Rgb = Rgb { r: 150, g: 70, b: 30 };

fn blob(center: Point3, n: usize, step: f64) -> Vec<Point3> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            out.push(center + Point3::new(0.0, i as f64 * step, j as f64 * step));
        }
    }
    out
}

#[test]
fn detect_two_blobs_writes_cluster_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut points = blob(Point3::new(0.0, 0.0, 0.0), 10, 0.01);
    points.extend(blob(Point3::new(0.0, 1.0, 0.0), 8, 0.01));
    let colors = vec![RUST; points.len()];
    let input = dir.path().join("in.pcd");
    write_pcd_file(&input, &PointCloud::with_colors(points, colors).unwrap()).unwrap();

    let out_dir = dir.path().join("clusters");
    let out = star(&["detect", "--cloud", s(&input), "--out", s(&out_dir), "--min-size", "10"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("2 clusters\n"), "{text}");
    let sizes: Vec<usize> = (1..=2)
        .map(|id| read_pcd_file(out_dir.join(format!("cluster_{id}.pcd"))).unwrap().len())
        .collect();
    let mut sorted = sizes.clone();
    sorted.sort();
    assert_eq!(sorted, vec![64, 100]);
    assert!(text.contains(&format!("cluster 1: {} points", sizes[0])));
}

#[test]
fn detect_empty_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.pcd");
    write_pcd_file(&empty, &PointCloud::new(vec![])).unwrap();
    let out = star(&["detect", "--cloud", s(&empty), "--out", s(dir.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), "0 clusters\n");

    let missing = dir.path().join("nope.pcd");
    let out = star(&["detect", "--cloud", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.pcd"), "{}", stderr(&out));
}

fn demo(dir: &Path) -> std::path::PathBuf {
    let demo = dir.join("demo");
    let out = star(&["demo-assets", "--out", s(&demo)]);
    assert!(out.status.success(), "{}", stderr(&out));
    demo
}

fn plate_cluster(dir: &Path) -> std::path::PathBuf {
    let (plate, rust) = scenario::plate();
    let path = dir.join("cluster.pcd");
    write_pcd_file(&path, &plate.select(&rust)).unwrap();
    path
}

#[test]
fn demo_assets_are_complete() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo(dir.path());
    for f in ["scene.pcd", "floor.grid", "valve_exclusion.json", "config.json", "assets/scene.png"] {
        assert!(demo.join(f).is_file(), "{f}");
    }
    let png = std::fs::read(demo.join("assets/scene.png")).unwrap();
    assert_eq!(&png[1..4], b"PNG");
}

#[test]
fn plan_unconstrained_covers_whole_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = plate_cluster(dir.path());
    let csv_path = dir.path().join("f.csv");
    let out = star(&["plan", "--cloud", s(&cluster), "--unconstrained", "--out", s(&csv_path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "coverage_fraction"), "1.000000");
    let n: usize = field(&text, "fixture_count").parse().unwrap();
    assert_eq!(field(&text, "reachable_count").parse::<usize>().unwrap(), n);

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["x", "y", "z", "qw", "qx", "qy", "qz", "reachable"]
    );
    assert_eq!(reader.records().count(), n);
}

#[test]
fn plan_with_valve_exclusion_keeps_sources_outside() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo(dir.path());
    let cluster = plate_cluster(dir.path());
    let csv_path = dir.path().join("f.csv");
    let out = star(&[
        "plan",
        "--cloud",
        s(&cluster),
        "--exclusions",
        s(&demo.join("valve_exclusion.json")),
        "--grid",
        s(&demo.join("floor.grid")),
        "--out",
        s(&csv_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let offset = star_review::ScenarioConfig::default().planner.offset;
    let volume = scenario::valve_exclusion();
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let mut rows = 0;
    for record in reader.records() {
        let r = record.unwrap();
        let v: Vec<f64> = (0..7).map(|i| r[i].parse().unwrap()).collect();
        let q = UnitQuaternion::new(v[3], v[4], v[5], v[6]).unwrap();
        // fixtures stand `offset` off the surface along their local z
        let source = Point3::new(v[0], v[1], v[2]) - q.rotate(Point3::new(0.0, 0.0, offset));
        assert!(!volume.contains(source), "{source:?}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn plan_excluding_everything_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = plate_cluster(dir.path());
    let all = dir.path().join("all.json");
    std::fs::write(
        &all,
        r#"{"volumes":[{"shape":"box","pose":{"position":[2,0,0.5],"orientation":[1,0,0,0]},"dims":[1,1,1]}]}"#,
    )
    .unwrap();
    let out = star(&["plan", "--cloud", s(&cluster), "--exclusions", s(&all), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("after exclusion"));
}

#[test]
fn navigate_costs_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.grid");
    std::fs::write(&grid, "5 5 0.1\n.....\n.....\n.....\n.....\n.....\n").unwrap();
    let out = star(&["navigate", "--grid", s(&grid), "--start", "0,0", "--goal", "4,4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "cost"), "5.65685");
    assert!(text.contains("S"), "{text}");

    let out = star(&["navigate", "--grid", s(&grid), "--start", "2,2", "--goal", "2,2"]);
    assert_eq!(field(&stdout(&out), "cost"), "0.00000");

    std::fs::write(&grid, "5 5 0.1\n..#..\n..#..\n..#..\n..#..\n..#..\n").unwrap();
    let out = star(&["navigate", "--grid", s(&grid), "--start", "0,0", "--goal", "4,4"]);
    assert_eq!(out.status.code(), Some(3));

    let out = star(&["navigate", "--grid", s(&grid), "--start", "0,0", "--goal", "9,9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let d = star(&["detect", "--cloud", s(&demo.join("scene.pcd")), "--out", s(&out_dir)]);
        let csv_path = out_dir.join("f.csv");
        let p = star(&[
            "plan",
            "--cloud",
            s(&out_dir.join("cluster_1.pcd")),
            "--exclusions",
            s(&demo.join("valve_exclusion.json")),
            "--out",
            s(&csv_path),
        ]);
        (
            std::fs::read(out_dir.join("cluster_1.pcd")).unwrap(),
            std::fs::read(csv_path).unwrap(),
            stdout(&p),
            d.status.success(),
        )
    };
    let a = run("a");
    assert!(a.3);
    let b = run("b");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2.replace("/a/", "/b/"), b.2);
}

#[test]
fn serve_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"planner": {"spacing": "wide"}}"#).unwrap();
    let out = star(&["serve", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("c.json"), "{}", stderr(&out));
}

fn spawn_serve(config: &Path) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_star"))
        .args(["serve", "--config", s(config), "--port", "0"])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let url = loop {
        let line = lines.next().expect("serve exited early").unwrap();
        if let Some(i) = line.find("listening on ") {
            break line[i + "listening on ".len()..].trim().to_string();
        }
    };
    // keep draining so the child never blocks on a full pipe
    std::thread::spawn(move || lines.for_each(drop));
    (child, url)
}

#[test]
fn serve_reviews_then_stops_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let demo = demo(dir.path());
    let config = demo.join("config.json");
    let (mut child, url) = spawn_serve(&config);
    assert!(url.starts_with("ws://127.0.0.1:") && url.ends_with("/ws"), "{url}");
    assert!(!url.contains(":0/"));

    let volumes = ExclusionFile::load(&demo.join("valve_exclusion.json")).unwrap().volumes;
    let outcome = tokio::runtime::Runtime::new()
        .unwrap()
        .block_on(scripted_review(&url, None, Some(volumes)))
        .unwrap();
    assert_eq!(outcome.phases.last(), Some(&SessionState::Done));

    let kill = Command::new("kill")
        .args(["-INT", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(kill.success());
    assert!(child.wait().unwrap().success());

    let sessions = replay_dir(&demo.join("logs")).unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(sessions[0].state, SessionState::Done);
    let out = star(&["replay", "--log-dir", s(&demo.join("logs"))]);
    assert!(stdout(&out).starts_with("session 1: done"), "{}", stdout(&out));
}
