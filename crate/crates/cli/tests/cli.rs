use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5
parallelism = 1
[codec]
max_layers = 3
growth_max = 8
[pso]
population_size = 3
generations = 2
[train]
full_epochs = 2
stem_channels = 4
[surrogate]
window = 1
iterations = 500
[grid]
widen = [1, 2]
deepen = [1, 2]

[[sources]]
kind = "blobs"
name = "a"
num_classes = 3
per_class = 12
image_size = 8
noise_std = 0.2

[target]
kind = "blobs"
name = "t"
num_classes = 3
per_class = 12
image_size = 8
noise_std = 0.2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_blockevo"));
    c.env_remove("BLOCKEVO_OUT").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir` with its bytes, sorted by path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["pipeline", "--config", s(&cfg), "--seed", "1", "--out", s(out), "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["block.json", "network.json", "grid_table.csv", "evolution_history.csv", "ledger.json", "config.resolved.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let echoed = fs::read_to_string(a.join("config.resolved.toml")).unwrap();
    assert!(echoed.contains("seed = 1"), "{echoed}");
}

#[test]
fn gridsearch_requires_a_block() {
    let o = run(&["gridsearch"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--block"));
}

#[test]
fn usage_and_config_errors_have_distinct_codes() {
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["evolve", "--seed", "notanumber"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "[pso]\npopulation_size = 0\n");
    let o = run(&["evolve", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pso.population_size"));

    let typo = write_config(tmp.path(), "[pso]\ngenerationz = 3\n");
    let o = run(&["evolve", "--config", s(&typo)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generationz"));

    let missing = tmp.path().join("missing.toml");
    assert_eq!(run(&["evolve", "--config", s(&missing)]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    // an 8x8 image cannot take four transitions
    let cfg = write_config(tmp.path(), &TINY.replace("deepen = [1, 2]", "deepen = [5, 5]"));
    let block = tmp.path().join("block.json");
    fs::write(&block, r#"{"growth_rates":[2]}"#).unwrap();
    let o = run(&["gridsearch", "--config", s(&cfg), "--block", s(&block), "--out", s(&tmp.path().join("g"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no grid cell"));
}

#[test]
fn out_dir_defaults_under_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let o = bin()
        .env("BLOCKEVO_OUT", tmp.path())
        .args(["evolve", "--config", s(&cfg), "--quiet"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("evolve-seed5");
    assert!(dir.join("block.json").exists());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), s(&dir));
}

#[test]
fn report_is_read_only_and_lists_the_essentials() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = tmp.path().join("run");
    let o = run(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success());

    let before = snapshot(&out);
    let o = run(&["report", s(&out)]);
    assert!(o.status.success());
    assert_eq!(snapshot(&out), before);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("gating rate:"), "{text}");
    assert!(text.contains("grid argmax: widen"), "{text}");
    assert!(text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count() >= 2);

    let o = run(&["report", s(&out), "--csv", "-"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("generation,global_best_fitness,mean_fitness"));
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(snapshot(&out), before);

    assert_eq!(run(&["report", s(&tmp.path().join("nope"))]).status.code(), Some(1));
}

#[test]
fn train_prints_one_row_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let net = tmp.path().join("net.json");
    fs::write(
        &net,
        r#"{"stem":{"kernel_size":3,"out_channels":4},"widen":1,"deepen":2,"block":{"growth_rates":[3]},"num_classes":3,"input_shape":[1,8,8]}"#,
    )
    .unwrap();
    let o = run(&["train", "--config", s(&cfg), "--network", s(&net), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,loss,accuracy");
    assert_eq!(lines.len(), 3);

    let wrong = tmp.path().join("wrong.json");
    fs::write(&wrong, fs::read_to_string(&net).unwrap().replace("\"num_classes\":3", "\"num_classes\":4")).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg), "--network", s(&wrong)]).status.code(), Some(1));
    assert_eq!(run(&["train", "--config", s(&cfg)]).status.code(), Some(1));
}
