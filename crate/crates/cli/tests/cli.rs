use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mlt_core::feasibility::implied_indicators;
use mlt_core::fixture_i3;
use mlt_core::io::{read_solution, write_instance, write_solution, Solution};
use tempfile::TempDir;

fn mlt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlt")).args(args).env_remove("MLT_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn line<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines().find_map(|l| l.strip_prefix(key)).unwrap_or_else(|| panic!("no `{key}` in {text}")).trim()
}

struct Fixture {
    dir: TempDir,
    instance: PathBuf,
}

impl Fixture {
    fn i3() -> Self {
        let dir = TempDir::new().unwrap();
        let instance = dir.path().join("i3.json");
        write_instance(&instance, &fixture_i3()).unwrap();
        Self { dir, instance }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn solve(&self, algorithm: &str, extra: &[&str]) -> (PathBuf, Output) {
        let out = self.path(&format!("{algorithm}.json"));
        let mut args = vec!["solve", s(&self.instance), "--algorithm", algorithm, "--out", s(&out)];
        args.extend_from_slice(extra);
        let o = mlt(&args);
        (out, o)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn every_algorithm_solves_i3() {
    let f = Fixture::i3();
    for (alg, extra) in [("gla", vec![]), ("klb", vec!["--d-mcbp", "inf"]), ("klb", vec!["--d-mcbp", "0"]), ("exact", vec![])] {
        let (out, o) = f.solve(alg, &extra);
        assert!(o.status.success(), "{alg}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(line(&stdout(&o), "objective:"), "-3");
        line(&stdout(&o), "wall_time_s:");
        let sol = read_solution(&out).unwrap();
        assert_eq!(sol.objective, -3.0);
        assert_eq!(sol.algorithm, alg);
        assert!(mlt(&["validate", s(&f.instance), s(&out)]).status.success());
    }
}

#[test]
fn klb_accepts_a_starting_solution_and_traces() {
    let f = Fixture::i3();
    let (init, _) = f.solve("gla", &[]);
    let out = f.path("klb_from_init.json");
    let o = mlt(&["solve", s(&f.instance), "--algorithm", "klb", "--init", s(&init), "--out", s(&out), "--trace"]);
    assert!(o.status.success());
    assert!(read_solution(&out).unwrap().trace.is_some());
}

#[test]
fn tampered_solution_fails_validation() {
    let f = Fixture::i3();
    let g = fixture_i3();
    let mut l = implied_indicators(&g, vec![1.0; g.num_edges()]);
    l.birth.iter_mut().for_each(|b| *b = 0.0);
    let bad = f.path("bad.json");
    write_solution(&bad, &Solution::new(&g, l, 0.0, "hand")).unwrap();
    let o = mlt(&["validate", s(&f.instance), s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let n: usize = line(&stdout(&o), "violations:").parse().unwrap();
    assert!(n > 0);
    assert!(stdout(&o).contains("birth:"));
}

#[test]
fn separate_reports_both_morality_counts() {
    let f = Fixture::i3();
    let g = fixture_i3();
    // Both parents linked into one child cell without being joined.
    let immoral = f.path("immoral.json");
    write_solution(&immoral, &Solution::new(&g, implied_indicators(&g, vec![1.0, 0.0, 0.0, 0.0]), 0.0, "hand")).unwrap();
    let counts = |original: bool| {
        let mut args = vec!["separate", s(&f.instance), s(&immoral), "--families", "morality,cycles"];
        if original {
            args.push("--original");
        }
        let o = mlt(&args);
        assert_eq!(o.status.code(), Some(1));
        let text = stdout(&o);
        let cmp = line(&text, "morality comparison:").to_string();
        let total: usize = line(&text, "total:").parse().unwrap();
        (cmp, total)
    };
    let (reduced_cmp, reduced_total) = counts(false);
    let (original_cmp, original_total) = counts(true);
    assert_eq!(reduced_cmp, original_cmp);
    let nums: Vec<usize> = reduced_cmp.split(|c: char| !c.is_ascii_digit()).filter_map(|x| x.parse().ok()).collect();
    assert!(nums[0] >= 1 && nums[1] >= nums[0], "{reduced_cmp}");
    assert!(reduced_total >= 1 && original_total >= 1);

    let (opt, _) = f.solve("exact", &[]);
    let o = mlt(&["separate", s(&f.instance), s(&opt)]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(line(&stdout(&o), "total:"), "0");
}

#[test]
fn objective_and_compare() {
    let f = Fixture::i3();
    let (exact, _) = f.solve("exact", &[]);
    let o = mlt(&["objective", s(&f.instance), s(&exact)]);
    assert!(o.status.success());
    assert_eq!(line(&stdout(&o), "total:"), "-3");
    let worse = f.path("worse.json");
    let g = fixture_i3();
    write_solution(&worse, &Solution::new(&g, implied_indicators(&g, vec![1.0; 4]), 0.0, "singletons")).unwrap();
    let o = mlt(&["compare", s(&f.instance), s(&worse), s(&exact)]);
    assert!(o.status.success());
    let gap: f64 = line(&stdout(&o), "gap:").parse().unwrap();
    let singletons = mlt_core::objective(&g, &read_solution(&worse).unwrap().labeling).unwrap();
    assert!((gap - (singletons + 3.0) / 3.0).abs() < 1e-12);
}

#[test]
fn generate_is_deterministic_and_honours_mlt_seed() {
    let dir = TempDir::new().unwrap();
    let file = |n: &str| dir.path().join(n);
    let run = |out: &Path, seed: &str, env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mlt"));
        c.args(["generate", "--out", s(out), "--frames", "4", "--cells", "3", "--seed", seed]);
        match env {
            Some(v) => c.env("MLT_SEED", v),
            None => c.env_remove("MLT_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        std::fs::read(out).unwrap()
    };
    let a = run(&file("a.json"), "5", None);
    let b = run(&file("b.json"), "5", None);
    let c = run(&file("c.json"), "6", None);
    let d = run(&file("d.json"), "6", Some("5"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a, d);

    let truth = file("truth.json");
    let o = mlt(&["generate", "--out", s(&file("e.json")), "--truth", s(&truth), "--division-prob", "0.5"]);
    assert!(o.status.success());
    assert!(mlt(&["validate", s(&file("e.json")), s(&truth)]).status.success());
}

#[test]
fn solutions_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let inst = dir.path().join("g.json");
    assert!(mlt(&["generate", "--out", s(&inst), "--frames", "5", "--cells", "4", "--sigma", "2"]).status.success());
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("s{i}.json"));
        assert!(mlt(&["solve", s(&inst), "--algorithm", "klb", "--out", s(&out)]).status.success());
        runs.push(strip(&out));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn exit_codes() {
    let f = Fixture::i3();
    assert_eq!(mlt(&["solve"]).status.code(), Some(2));
    assert_eq!(mlt(&["solve", s(&f.instance), "--algorithm", "simplex"]).status.code(), Some(2));
    assert_eq!(mlt(&["solve", s(&f.instance), "--d-mcbp", "far"]).status.code(), Some(2));
    assert_eq!(mlt(&["solve", "/nonexistent/instance.json"]).status.code(), Some(3));
    let broken = f.path("broken.json");
    std::fs::write(&broken, "{ \"format_version\": 1,").unwrap();
    let o = mlt(&["solve", s(&broken)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    // A solution for a different instance.
    let other = f.path("other.json");
    assert!(mlt(&["generate", "--out", s(&other)]).status.success());
    let (sol, _) = f.solve("gla", &[]);
    let o = mlt(&["validate", s(&other), s(&sol)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash"));
}
