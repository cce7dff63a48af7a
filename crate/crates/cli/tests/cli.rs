use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reduite(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reduite"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const DISK_DIRAC: &str = r#"
name = "disk-dirac"
command = "tail"
levels = [0.25, 0.5, 1.0]

[domain]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0

[operator]
kind = "laplacian"

[measure]
atoms = [{ point = [0.0, 0.0], weight = 1.0 }]

[grid]
h = 0.03125
"#;

#[test]
fn tail_on_disk_dirac_is_concentrated_like() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", DISK_DIRAC);
    let o = reduite(&["tail", "--config", &cfg], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("disk-dirac.tail.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.split(',').any(|c| c == "t_n"), "{header}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("disk-dirac.json")).unwrap())
            .unwrap();
    assert_eq!(json["verdict"], "concentrated-like");
    let limit = json["results"]["limit"].as_f64().unwrap();
    let target = 1.0 / (4.0 * PI);
    assert!((limit - target).abs() / target < 0.03, "{limit}");
    // config echoed verbatim
    assert_eq!(json["config_text"], DISK_DIRAC);
}

#[test]
fn failed_expectation_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{DISK_DIRAC}\n[expect]\nverdict = \"diffuse-like\"\n");
    let cfg = write(dir.path(), "c.toml", &text);
    let o = reduite(&["tail", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("disk-dirac.json")).unwrap())
            .unwrap();
    assert_eq!(json["pass"], false);
}

#[test]
fn malformed_configs_exit_with_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (DISK_DIRAC.replace("h = 0.03125", "h = \"fine\""), "grid.h"),
        (
            DISK_DIRAC.replace("radius = 1.0", "radius = 1.0\nradios = 2.0"),
            "domain",
        ),
        (
            DISK_DIRAC.replace("weight = 1.0", "weight = true"),
            "measure.atoms[0].weight",
        ),
        (
            DISK_DIRAC.replace("levels = [0.25, 0.5, 1.0]", "levels = [0.5, 0.25]"),
            "levels",
        ),
        (
            DISK_DIRAC.replace("radius = 1.0", "radius = -1.0"),
            "domain",
        ),
        (
            DISK_DIRAC.replace("kind = \"laplacian\"", "kind = \"biharmonic\""),
            "operator.kind",
        ),
        (
            format!("{DISK_DIRAC}\n[expect]\nwithin_stderr = 3.0\n"),
            "expect.within_stderr",
        ),
    ];
    for (text, field) in cases {
        let cfg = write(dir.path(), "bad.toml", &text);
        let o = reduite(&["tail", "--config", &cfg], dir.path());
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(1), "{field}: {err}");
        assert!(
            err.contains(&format!("`{field}`")),
            "expected `{field}` in: {err}"
        );
    }
}

#[test]
fn stochastic_runs_need_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/presets/c11-reducing-expectation.toml"
    ))
    .unwrap()
    .replace("seed = 11\n", "");
    let cfg = write(dir.path(), "c.toml", &text);
    let o = reduite(&["mc", "reducing", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`seed`"));
}

#[test]
fn command_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = reduite(&["solve", "--preset", "c03-tail-disk-dirac"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`command`"));
    let o = reduite(&["tail", "--preset", "no-such-preset"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn nonlocal_functional_on_a_local_operator_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/presets/c05-local-reconstruction.toml"
    ))
    .unwrap()
    .replace("reconstruct local", "reconstruct");
    let cfg = write(dir.path(), "c.toml", &text);
    let o = reduite(&["reconstruct", "nonlocal", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported combination"));
}

#[test]
fn verify_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = reduite(&["verify", "--criteria", "7,8,9,10"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("verify.criteria.csv")).unwrap();
    assert_eq!(
        csv.lines()
            .filter(|l| l.ends_with(",true,") || l.contains(",true,"))
            .count(),
        4
    );
}

#[test]
fn reruns_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["c01-kernel-accuracy", "constants", "c12a-classd-bounded"] {
        let o = reduite(&["run", "--preset", preset], dir.path());
        assert_eq!(
            o.status.code(),
            Some(0),
            "{preset}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let snapshot = |d: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| (p.display().to_string(), fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    let first = snapshot(dir.path());
    assert_eq!(first.len(), 3);
    for preset in ["c01-kernel-accuracy", "constants", "c12a-classd-bounded"] {
        reduite(&["run", "--preset", preset], dir.path());
    }
    assert_eq!(snapshot(dir.path()), first);
}

#[test]
fn seed_flag_changes_stochastic_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    reduite(&["run", "--preset", "c13a-maximal-bounded"], &a);
    reduite(
        &["run", "--preset", "c13a-maximal-bounded", "--seed", "99"],
        &b,
    );
    let name = "c13a-maximal-bounded.maximal.csv";
    assert_ne!(
        fs::read(a.join(name)).unwrap(),
        fs::read(b.join(name)).unwrap()
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(b.join("c13a-maximal-bounded.json")).unwrap())
            .unwrap();
    assert_eq!(json["seed"], 99);
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_reduite"))
        .args(["constants"])
        .env("REDUITE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("constants.constants.csv")).unwrap();
    // c(1, 1) = 1/pi
    let row = csv
        .lines()
        .find(|l| l.starts_with("1.0000000000000000e0,1,"))
        .unwrap();
    let c: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((c - 1.0 / PI).abs() < 1e-15);
}

#[test]
fn presets_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let o = reduite(&["presets"], dir.path());
    let s = String::from_utf8_lossy(&o.stdout);
    for (name, _) in reduite_cli::presets::PRESETS {
        assert!(s.contains(name));
    }
}
