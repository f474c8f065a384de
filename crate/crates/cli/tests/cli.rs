use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebm-spectral"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON document")
}

/// CSV body as rows of fields, header dropped.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn by_k(text: &str) -> BTreeMap<u32, Vec<Vec<String>>> {
    let mut out: BTreeMap<u32, Vec<_>> = BTreeMap::new();
    for r in rows(text) {
        out.entry(r[0].parse().unwrap()).or_default().push(r);
    }
    out
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn spectrum_n5_d1_structure() {
    let text = stdout(&["spectrum", "--preset", "n5-d1", "--k-max", "40"]);
    assert_eq!(text.lines().next().unwrap(), "k,kind,index,re,im,residual");
    let data = by_k(&text);
    assert_eq!(data.len(), 40);
    for (k, rs) in &data {
        let interlaced: Vec<f64> = rs
            .iter()
            .filter(|r| r[1] == "real" && r[2].parse::<usize>().unwrap() <= 5)
            .map(|r| num(&r[3]))
            .collect();
        assert_eq!(interlaced.len(), 5);
        let poles = [0.0, -5.0, -10.0, -15.0, -20.0, -25.0];
        for (j, a) in interlaced.iter().enumerate() {
            assert!(*a > poles[j + 1] && (j == 0 || *a < poles[j]), "k={k} j={j} {a}");
        }
        let complex = rs.iter().filter(|r| r[1] == "complex").count();
        if *k >= 3 {
            assert_eq!((rs.len(), complex), (6, 1), "k={k}");
        } else {
            // small k: the extra pair is real
            assert_eq!((rs.len(), complex), (7, 0), "k={k}");
        }
        assert!(rs.iter().all(|r| num(&r[5]) < 1e-10));
    }
}

#[test]
fn spectrum_n9_and_toy_counts() {
    let data = by_k(&stdout(&["spectrum", "--preset", "n9-d0.5", "--k-max", "30"]));
    for rs in data.values() {
        let interlaced = rs
            .iter()
            .filter(|r| r[1] == "real" && r[2].parse::<usize>().unwrap() <= 9)
            .count();
        assert_eq!(interlaced, 9);
    }
    let data = by_k(&stdout(&["spectrum", "--preset", "toy", "--k-max", "5"]));
    for rs in data.values() {
        assert_eq!(rs.len(), 2);
        assert_eq!(rs[0][1], "real");
        assert_eq!(rs[1][1], "complex");
    }
}

#[test]
fn limit_outputs() {
    let r = rows(&stdout(&["limit", "--preset", "n2-d1"]));
    assert!(num(&r[0][1]).abs() < 1e-12);
    assert!((num(&r[1][1]) + 7.5).abs() < 1e-12);
    let r = rows(&stdout(&["limit", "--preset", "toy"]));
    assert!((num(&r[0][1]) + 0.5).abs() < 1e-15);
    let r = rows(&stdout(&["limit", "--preset", "n5-d5", "--format", "csv"]));
    assert_eq!(r.len(), 5);
    for (j, row) in r.iter().enumerate() {
        let a = num(&row[1]);
        assert!(a > -5.0 * (j + 1) as f64 && a < -5.0 * j as f64 || j == 0 && a > -5.0);
    }
}

#[test]
fn converge_rates_on_n5_d5() {
    let text = stdout(&["converge", "--preset", "n5-d5", "--k-max", "100"]);
    assert_eq!(text.lines().next().unwrap(), "k,series,index,value,error,scaled_error");
    let r = rows(&text);
    let series = |name: &str, index: &str| -> Vec<(f64, f64)> {
        r.iter()
            .filter(|x| x[1] == name && x[2] == index)
            .map(|x| (num(&x[4]), num(&x[5])))
            .collect()
    };
    for j in 1..=5 {
        let s = series("real", &j.to_string());
        assert_eq!(s.len(), 100);
        // errors decay, k^2 * error stays within a factor 4 of its k = 20 value
        assert!(s[99].0 < s[19].0 / 10.0);
        assert!(s[99].1 < 4.0 * s[19].1, "j = {j}");
    }
    let q = series("q", "0");
    assert!(q.last().unwrap().0 < q[19].0 / 3.0);
    assert!(q.last().unwrap().1 < 4.0 * q[19].1);
}

#[test]
fn converge_quasi_static_column() {
    let r = rows(&stdout(&["converge", "--preset", "n5-d1", "--k-max", "30"]));
    for x in r.iter().filter(|x| x[1] == "real" && x[2] == "1") {
        assert!(num(&x[4]).abs() < 1e-12);
    }
}

#[test]
fn k0_certificate_and_rejection() {
    let v: serde_json::Value =
        serde_json::from_str(&stdout(&["k0", "--preset", "n2-d1", "--format", "json"])).unwrap();
    assert_eq!(v["mu_exact"], "25/242");
    assert_eq!(v["r_big_exact"], "31");
    let k0 = v["k0"].as_u64().unwrap() as f64;
    assert!((k0 - 27_386.4).abs() / 27_386.4 < 0.01);

    let err = error_json(&run(&["k0", "--preset", "toy"]));
    assert_eq!(err["error"], "unsupported");
}

#[test]
fn k0_with_bounds() {
    let v: serde_json::Value = serde_json::from_str(&stdout(&[
        "k0", "--preset", "n2-d1", "--bounds", "--k-max", "20", "--format", "json",
    ]))
    .unwrap();
    let checks = v["bounds"]["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["holds"] == true));
    assert_eq!(v["bounds"]["first_complex_k"], 3);
}

#[test]
fn observe_then_invert() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    for k in ["1", "2"] {
        stdout(&["observe", "--preset", "n2-d1", "--k", k, "--out", &p(&format!("k{k}.json"))]);
    }
    let v: serde_json::Value = serde_json::from_str(&stdout(&[
        "invert",
        &p("k1.json"),
        &p("k2.json"),
        "--format",
        "json",
    ]))
    .unwrap();
    let rates: Vec<f64> = v["model"]["r"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let weights: Vec<f64> = v["model"]["b"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    for (got, want) in rates.iter().zip([5.0, 10.0]).chain(weights.iter().zip([2.5, 5.0])) {
        assert!((got - want).abs() / want < 1e-8, "{got} vs {want}");
    }
    assert!((v["D"].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let err = error_json(&run(&["invert", &p("k1.json"), &p("k1.json")]));
    assert_eq!(err["error"], "inverse");
}

#[test]
fn perturb_is_seeded() {
    let args = [
        "perturb", "--preset", "n2-d1", "--noise", "1e-6", "--trials", "6", "--seed", "11",
    ];
    let a = stdout(&args);
    assert_eq!(a, stdout(&args));
    assert_eq!(rows(&a).len(), 6);
    let other = stdout(&[
        "perturb", "--preset", "n2-d1", "--noise", "1e-6", "--trials", "6", "--seed", "12",
    ]);
    assert_ne!(a, other);
}

#[test]
fn fit_equal_contribution() {
    let r = rows(&stdout(&["fit", "--n", "5", "--mode", "equal-contribution"]));
    for (i, row) in r.iter().enumerate() {
        assert!((num(&row[3]) - (i + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn model_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    std::fs::write(&path, "N = 2\nD = 1.0\nr = [5.0, 10.0]\nb = [2.5, 5.0]\n").unwrap();
    let from_file = stdout(&["spectrum", "--model", path.to_str().unwrap(), "--k-max", "5"]);
    assert_eq!(from_file, stdout(&["spectrum", "--preset", "n2-d1", "--k-max", "5"]));

    std::fs::write(&path, "N = 2\nD = 1.0\nr = [5.0, 10.0]\n").unwrap();
    let err = error_json(&run(&["spectrum", "--model", path.to_str().unwrap()]));
    assert_eq!(err["error"], "config");
}

#[test]
fn usage_errors_are_json() {
    let err = error_json(&run(&["spectrum", "--preset", "n4-d1"]));
    assert_eq!(err["error"], "config");
    let err = error_json(&run(&["spectrum"]));
    assert_eq!(err["error"], "usage");
    let err = error_json(&run(&["spectrum", "--preset", "toy", "--k-min", "0"]));
    assert_eq!(err["error"], "invalid_argument");
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn reproduce_figures_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        stdout(&["reproduce-figures", "--out", d.path().to_str().unwrap(), "--k-max", "20"]);
    }
    let fa = read_dir(a.path());
    assert_eq!(fa, read_dir(b.path()));
    let count = |prefix: &str| fa.keys().filter(|k| k.starts_with(prefix)).count();
    assert_eq!(count("spectrum_"), 6);
    assert_eq!(count("convergence_"), 3);

    let manifest: serde_json::Value = serde_json::from_slice(&fa["manifest.json"]).unwrap();
    let mut listed: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["file"].as_str().unwrap())
        .collect();
    listed.sort();
    let mut listed_dedup = listed.clone();
    listed_dedup.dedup();
    assert_eq!(listed, listed_dedup);
    assert_eq!(listed.len(), fa.len() - 1);
}
