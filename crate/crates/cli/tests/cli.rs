use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gba")).args(args).output().expect("run gba")
}

fn city() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join("city")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(gba(&["--no-such-flag"]).status.code(), Some(64));
    assert_eq!(gba(&["mosaic", "--target"]).status.code(), Some(64));
    assert_eq!(gba(&["--tile", "x", "pipeline"]).status.code(), Some(64));
    assert_eq!(gba(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_exits_2() {
    let out = gba(&["lod1", "--footprints", "/definitely/not/here.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("here.jsonl"));
}

#[test]
fn invalid_parameters_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let prob = city().join("probability.tif");
    let out = gba(&["polygonize", "--prob", s(&prob), "--threshold", "1.5", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(gba(&["pipeline"]).status.code(), Some(1));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[thresholds]\nunknown_key = 1\n").unwrap();
    assert_eq!(gba(&["--config", s(&bad), "pipeline"]).status.code(), Some(1));
}

#[test]
fn eval_of_a_file_against_itself_is_perfect() {
    let gt = city().join("ground_truth.jsonl");
    let out = gba(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--city", "c", "--product", "p"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "city,product,iou,ap50,ar50,n_ratio,rmse_bv,mae_bv,rmse_bh,mae_bh,completeness"
    );
    assert_eq!(lines.next().unwrap(), "c,p,1,1,1,1,0,0,0,0,1");
}

#[test]
fn fixture_command_reproduces_the_bundled_city() {
    let dir = tempfile::tempdir().unwrap();
    let out = gba(&["--seed", "7", "fixture", "--out", s(dir.path())]);
    assert!(out.status.success());
    let mut names: Vec<_> = std::fs::read_dir(city()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        let a = std::fs::read(city().join(&name)).unwrap();
        let b = std::fs::read(dir.path().join(&name)).unwrap();
        assert!(a == b, "{name:?} differs from a fresh fixture");
    }
}

#[test]
fn pipeline_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = city().join("demo.toml");
    let out = gba(&["--config", s(&cfg), "--out", s(dir.path()), "pipeline"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "mosaic.tif",
        "mosaic_scenes.csv",
        "psr.jsonl",
        "polygonize_report.csv",
        "fused.jsonl",
        "contributions.csv",
        "fusion_sources.csv",
        "lod1.jsonl",
        "lod1.csv",
        "height_mean.tif",
        "height_variance.tif",
        "region_stats.csv",
        "grid_volume.tif",
        "grid_volume.csv",
        "eval.csv",
        "rejections.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let eval = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let row: Vec<&str> = eval.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["synthetic", "lod1"]);
    let completeness: f64 = row[10].parse().unwrap();
    assert!(completeness > 0.9);
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c = city();
    let ok = |o: Output| assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    ok(gba(&[
        "polygonize",
        "--prob",
        s(&c.join("probability.tif")),
        "--landcover",
        s(&c.join("landcover.tif")),
        "--out",
        s(d),
    ]));
    let psr = d.join("psr.jsonl");
    ok(gba(&[
        "fuse",
        "--source",
        &format!("OSM={}", s(&c.join("osm.jsonl"))),
        "--source",
        &format!("PSRDerived={}", s(&psr)),
        "--admin",
        s(&c.join("admin.jsonl")),
        "--out",
        s(d),
    ]));
    let mut args = vec!["lod1".to_string(), "--footprints".into(), s(&d.join("fused.jsonl")).into()];
    for k in 0..4 {
        args.push("--height".into());
        args.push(s(&c.join(format!("height_{k}.tif"))).into());
    }
    args.extend(["--out".into(), s(d).into()]);
    ok(gba(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let lod1 = d.join("lod1.jsonl");
    ok(gba(&["analyze", "grid-volume", "--lod1", s(&lod1), "--cell-m", "240", "--out", s(d)]));
    ok(gba(&["analyze", "volume-by-country", "--lod1", s(&lod1), "--out", s(d)]));
    let stats = std::fs::read_to_string(d.join("region_stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 3);
    ok(gba(&["mosaic", "--scenes", s(&c.join("scenes.csv")), "--out", s(d)]));
    let used = std::fs::read_to_string(d.join("mosaic_scenes.csv")).unwrap();
    assert!(!used.contains("scene_2"), "fallback year used while primary scenes suffice");
}
