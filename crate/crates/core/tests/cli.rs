mod common;

use std::path::Path;
use std::process::{Command, Output};

fn gridbid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridbid"))
        .args(args)
        .current_dir(cwd)
        .env_remove("GRIDBID_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 30-bus system, shortened for tests.
fn write_small_scenario(dir: &Path) -> std::path::PathBuf {
    let text = format!(
        "name = \"small\"\n\
         [topology]\ncase = \"{}\"\n\
         [units]\nfile = \"{}\"\n\
         [training]\nepisodes = 2\nsteps_per_episode = 12\nbatch_size = 4\n\
         [seeds]\nbase = 5\n",
        common::data_path("data/ieee30.case").display(),
        common::data_path("data/ieee30_units.csv").display(),
    );
    let path = dir.join("small.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn clear_prints_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let units = common::data_path("data/ieee30_units.csv");
    let units = units.to_str().unwrap();
    let o = gridbid(
        &[
            "clear",
            "--units",
            units,
            "--bids",
            "1,1,1,1,1,1",
            "--demand",
            "150",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("price 1.75\n"), "{out}");
    assert!(out.contains("dispatch 5 80 50 5 5 5\n"), "{out}");
    assert!(out.contains("marginal_unit 2\n"), "{out}");

    let o = gridbid(
        &[
            "--json",
            "clear",
            "--units",
            units,
            "--bids",
            "1,1,1,1,1,1",
            "--demand",
            "150",
        ],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["price"], 1.75);
    assert_eq!(v["marginal_unit"], 2);
}

#[test]
fn exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let units = common::data_path("data/ieee30_units.csv");
    let units = units.to_str().unwrap();
    let bids = "1,1,1,1,1,1";
    assert_eq!(
        code(&gridbid(
            &["clear", "--units", units, "--bids", bids, "--demand", "10"],
            dir.path()
        )),
        3
    );
    assert_eq!(
        code(&gridbid(
            &["clear", "--units", units, "--bids", bids, "--demand", "400"],
            dir.path()
        )),
        3
    );
    assert_eq!(
        code(&gridbid(
            &[
                "clear",
                "--units",
                units,
                "--bids",
                "3,1,1,1,1,1",
                "--demand",
                "150"
            ],
            dir.path()
        )),
        2
    );
    assert_eq!(
        code(&gridbid(
            &["clear", "--units", units, "--bids", "1,1", "--demand", "150"],
            dir.path()
        )),
        2
    );
    assert_eq!(code(&gridbid(&["train", "missing.cfg"], dir.path())), 2);
    assert_eq!(code(&gridbid(&["frobnicate"], dir.path())), 2);
    let o = gridbid(
        &["clear", "--units", units, "--bids", bids, "--demand", "10"],
        dir.path(),
    );
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
}

#[test]
fn train_eval_fault_and_checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = write_small_scenario(d);
    let scenario = scenario.to_str().unwrap();

    let o = gridbid(&["train", scenario, "--out", "runs"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = d.join("runs/seed_5");
    for f in [
        "run.csv",
        "summary.csv",
        "manifest.json",
        "checkpoints/agent_1.json",
        "checkpoints/agent_6.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let header = std::fs::read_to_string(run.join("run.csv")).unwrap();
    assert!(header.starts_with("episode,step,demand,price,unit,bid,dispatch,reward\n"));
    assert_eq!(header.lines().count(), 1 + 2 * 12 * 6);
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("episode,unit,avg_profit,avg_bid\n"));

    let ckpt = run.to_str().unwrap();
    let o = gridbid(
        &["eval", scenario, "--checkpoint", ckpt, "--out", "eval"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("eval/run.csv").is_file());

    let o = gridbid(
        &[
            "fault",
            scenario,
            "--checkpoint",
            ckpt,
            "--out",
            "faults",
            "--steps",
            "6",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("faults/faults.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n_disconnected,method,avg_profit");
    let counts: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(counts, ["3", "5", "10"]);
    assert_eq!(
        code(&gridbid(
            &["fault", scenario, "--checkpoint", ckpt, "--fault", "7"],
            d
        )),
        2
    );

    // Corrupted checkpoint.
    let bad = d.join("bad");
    std::fs::create_dir_all(bad.join("checkpoints")).unwrap();
    std::fs::write(bad.join("checkpoints/agent_1.json"), "{ not json").unwrap();
    let o = gridbid(
        &["eval", scenario, "--checkpoint", bad.to_str().unwrap()],
        d,
    );
    assert_eq!(code(&o), 4);

    // Checkpoint built for the other feature layout.
    let o = gridbid(
        &[
            "train",
            scenario,
            "--out",
            "mlp",
            "--method",
            "mlp",
            "--episodes",
            "1",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.join("mlp/seed_5/checkpoints/agent_1.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["method"] = "gcn".into();
    std::fs::write(bad.join("checkpoints/agent_1.json"), v.to_string()).unwrap();
    let o = gridbid(
        &["eval", scenario, "--checkpoint", bad.to_str().unwrap()],
        d,
    );
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = write_small_scenario(d);
    let o = gridbid(
        &[
            "train",
            scenario.to_str().unwrap(),
            "--out",
            "a",
            "--seeds",
            "1,2",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    for seed in [1, 2] {
        let first = d.join(format!("a/seed_{seed}"));
        let manifest = first.join("manifest.json");
        let o = gridbid(
            &[
                "train",
                "--manifest",
                manifest.to_str().unwrap(),
                "--out",
                "b",
            ],
            d,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let second = d.join(format!("b/seed_{seed}"));
        for f in ["run.csv", "summary.csv", "manifest.json"] {
            assert_eq!(
                std::fs::read(first.join(f)).unwrap(),
                std::fs::read(second.join(f)).unwrap(),
                "seed {seed} {f}"
            );
        }
    }
    assert_ne!(
        std::fs::read(d.join("a/seed_1/run.csv")).unwrap(),
        std::fs::read(d.join("a/seed_2/run.csv")).unwrap()
    );

    // A manifest whose scenario changed is refused.
    std::fs::write(
        &scenario,
        std::fs::read_to_string(&scenario).unwrap() + "\n# edit\n",
    )
    .unwrap();
    let manifest = d.join("a/seed_1/manifest.json");
    assert_eq!(
        code(&gridbid(
            &["train", "--manifest", manifest.to_str().unwrap()],
            d
        )),
        2
    );
}
