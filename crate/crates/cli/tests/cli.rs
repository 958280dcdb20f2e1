use infograph::sim::{noisy_copy, reference_network, xor_system};
use infograph::structure::{edge_disagreements, DirectedGraph};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infograph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn reference_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference_network.toml")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: &str, seed: &str) -> Output {
    run(&[
        "simulate",
        "--config",
        p(&reference_config()),
        "--seed",
        seed,
        "--n",
        n,
        "--out",
        p(dir),
    ])
}

fn output_hashes(dir: &Path) -> Vec<(String, String)> {
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let path = o["path"].as_str().unwrap();
            let name = Path::new(path)
                .file_name()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            (name, o["sha256"].as_str().unwrap().to_string())
        })
        .collect()
}

fn write_model(dir: &Path, name: &str, json: String) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&simulate(&a, "5000", "7")), 0);
    assert_eq!(code(&simulate(&b, "5000", "7")), 0);
    for f in [
        "panel.csv",
        "truth.json",
        "truth.dot",
        "models.json",
        "manifest.json",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let (ha, hb) = (output_hashes(&a), output_hashes(&b));
    assert_eq!(ha.len(), 4);
    assert_eq!(ha, hb);
    let truth =
        DirectedGraph::from_json(&std::fs::read_to_string(a.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth, reference_network());
    let c = tmp.path().join("c");
    assert_eq!(code(&simulate(&c, "5000", "8")), 0);
    assert_ne!(output_hashes(&c)[0], ha[0]);
}

#[test]
fn simulate_config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "simulate",
        "--config",
        p(&reference_config()),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert_eq!(code(&simulate(tmp.path(), "0", "1")), 2);
    let cfg = std::fs::read_to_string(reference_config()).unwrap() + "seed = 3\n";
    let bad = write_model(tmp.path(), "bad.toml", cfg);
    let out = run(&[
        "simulate",
        "--config",
        p(&bad),
        "--seed",
        "1",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_then_infer_recovers_reference_network() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(code(&simulate(&sim, "200000", "7")), 0);
    let panel = sim.join("panel.csv");
    let names = "A,B,C,D,E,F";
    let truth = reference_network();
    for (method, extra, bound) in [("alg2", vec![], 3), ("alg3", vec!["--k", "3"], 4)] {
        let out_dir = tmp.path().join(method);
        let mut args = vec![
            "infer",
            "--method",
            method,
            "--panel",
            p(&panel),
            "--window",
            "10",
        ];
        args.extend(["--names", names, "--out", p(&out_dir)]);
        args.extend(extra);
        let out = run(&args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let g =
            DirectedGraph::from_json(&std::fs::read_to_string(out_dir.join("graph.json")).unwrap())
                .unwrap();
        assert!(edge_disagreements(&g, &truth) <= bound);
        let csv = std::fs::read_to_string(out_dir.join("estimates.csv")).unwrap();
        assert!(csv.starts_with("target,sources,conditioning,h_base,h_full,normalized"));
        assert!(std::fs::read_to_string(out_dir.join("graph.dot"))
            .unwrap()
            .contains("label="));
    }
    assert!(tmp.path().join("alg3/maximal.json").exists());
    assert!(!tmp.path().join("alg2/maximal.json").exists());
}

#[test]
fn alg3_without_k_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = run(&[
        "infer",
        "--method",
        "alg3",
        "--panel",
        "missing.csv",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn independent_panel_gives_empty_graph() {
    let tmp = TempDir::new().unwrap();
    let cfg = "names = [\"X\", \"Y\"]\nn = 50000\nwindow = 4\nbaseline_rate = 20.0\nbin_width = 0.001\n\
               self_weights = { mean = -1.0, sd = 0.2 }\ncross_weights = { mean = 0.0, sd = 0.0 }\n";
    let cfg = write_model(tmp.path(), "pair.toml", cfg.into());
    let sim = tmp.path().join("sim");
    let out = run(&[
        "simulate",
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--out",
        p(&sim),
    ]);
    assert_eq!(code(&out), 0);
    let inf = tmp.path().join("inf");
    let out = run(&[
        "infer",
        "--method",
        "alg2",
        "--panel",
        p(&sim.join("panel.csv")),
        "--window",
        "4",
        "--out",
        p(&inf),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "");
    let g = DirectedGraph::from_json(&std::fs::read_to_string(inf.join("graph.json")).unwrap())
        .unwrap();
    assert!(g.edges().is_empty());
}

#[test]
fn exact_alg1_matches_alg2() {
    let tmp = TempDir::new().unwrap();
    let model = write_model(
        tmp.path(),
        "xor.json",
        xor_system(0.1, 3).unwrap().to_json().unwrap(),
    );
    let mut graphs = Vec::new();
    for method in ["alg1", "alg2"] {
        let out_dir = tmp.path().join(method);
        let out = run(&[
            "infer",
            "--method",
            method,
            "--exact",
            "--model",
            p(&model),
            "--out",
            p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        graphs.push(std::fs::read_to_string(out_dir.join("graph.json")).unwrap());
    }
    assert_eq!(graphs[0], graphs[1]);
    let g = DirectedGraph::from_json(&graphs[0]).unwrap();
    assert_eq!(g.edges(), vec![(0, 2), (1, 2), (0, 3), (1, 3)]);
}

#[test]
fn query_five_node_example() {
    let tmp = TempDir::new().unwrap();
    let g = DirectedGraph::from_edges(5, &[(0, 1), (1, 2), (3, 0), (3, 2), (2, 4)])
        .unwrap()
        .with_names(["A", "B", "C", "D", "E"].map(String::from).to_vec())
        .unwrap();
    let path = write_model(tmp.path(), "g.json", g.to_json().unwrap());
    let ask = |q: &str| run(&["query", "--graph", p(&path), q]);
    for q in ["csep D | A | B", "csep D | A,C | B", "csep E | | C"] {
        let out = ask(q);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).starts_with("true\n"), "{q}");
    }
    let out = ask("csep C | | E");
    assert!(
        stdout(&out).starts_with("false\nopen path: C -> E"),
        "{}",
        stdout(&out)
    );
    assert_eq!(code(&ask("csep A |  | A")), 2);
    assert_eq!(code(&ask("csep Q | | A")), 2);
}

#[test]
fn exact_values_and_capacity() {
    let tmp = TempDir::new().unwrap();
    let copy = write_model(
        tmp.path(),
        "copy.json",
        noisy_copy(0.1, 2).unwrap().to_json().unwrap(),
    );
    let xor = write_model(
        tmp.path(),
        "xor.json",
        xor_system(0.1, 3).unwrap().to_json().unwrap(),
    );
    let h = -(0.1f64 * 0.1f64.log2() + 0.9 * 0.9f64.log2());
    let out = run(&["exact", "--model", p(&copy), "X -> Y"]);
    assert_eq!(stdout(&out).trim(), format!("{:.9}", 1.0 - h));
    let out = run(&["exact", "--model", p(&copy), "Y -> X"]);
    assert_eq!(stdout(&out).trim(), "0.000000000");
    let out = run(&["exact", "--model", p(&xor), "X -> Z || W,Y"]);
    assert!(stdout(&out).trim().parse::<f64>().unwrap() > 1e-3);
    let out = run(&["exact", "--model", p(&xor), "X -> Z", "--cap", "16"]);
    assert_eq!(code(&out), 4);
    let out = run(&[
        "infer",
        "--method",
        "alg2",
        "--exact",
        "--model",
        p(&xor),
        "--cap",
        "16",
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn estimation_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("t,p0,p1\n");
    for t in 0..40 {
        csv.push_str(&format!("{t},{},{}\n", t % 2, (t / 3) % 2));
    }
    let panel = write_model(tmp.path(), "short.csv", csv);
    let out = run(&[
        "infer",
        "--method",
        "alg2",
        "--panel",
        p(&panel),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn export_dot_with_labels() {
    let tmp = TempDir::new().unwrap();
    let model = write_model(
        tmp.path(),
        "xor.json",
        xor_system(0.1, 3).unwrap().to_json().unwrap(),
    );
    let inf = tmp.path().join("inf");
    assert_eq!(
        code(&run(&[
            "infer",
            "--method",
            "alg2",
            "--exact",
            "--model",
            p(&model),
            "--out",
            p(&inf)
        ])),
        0
    );
    let dot = tmp.path().join("g.dot");
    let out = run(&[
        "export-dot",
        "--graph",
        p(&inf.join("graph.json")),
        "--estimates",
        p(&inf.join("estimates.csv")),
        "--out",
        p(&dot),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.contains("\"W\" -> \"Z\" [label="), "{text}");
    assert_eq!(
        text,
        std::fs::read_to_string(inf.join("graph.dot")).unwrap()
    );
    assert!(tmp.path().join("g.dot.manifest.json").exists());
}

#[test]
fn jobs_flag_accepted() {
    let tmp = TempDir::new().unwrap();
    let model = write_model(
        tmp.path(),
        "xor.json",
        xor_system(0.1, 3).unwrap().to_json().unwrap(),
    );
    let out = run(&[
        "--jobs",
        "2",
        "infer",
        "--method",
        "alg2",
        "--exact",
        "--model",
        p(&model),
        "--out",
        p(tmp.path()),
    ]);
    assert_eq!(code(&out), 0);
}
