use std::path::Path;
use std::process::Command;

fn asp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asp"))
}

#[test]
fn analyze_policyspace_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = asp()
        .args([
            "analyze-policyspace",
            "--s-values",
            "4,8",
            "--a-values",
            "2",
        ])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(tmp.path().join("pruning.csv")).unwrap();
    assert!(csv.starts_with("S,A,exact_lr,stirling_lr\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.conf");
    std::fs::write(&bad, "train.nonsense=1\n").unwrap();
    let out = asp()
        .args(["analyze-policyspace"])
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let out = asp()
        .args(["analyze-policyspace", "--preset", "bogus"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Report over an empty directory is a hard error.
    let out = asp()
        .arg("report")
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn write_small_lever_config(path: &Path) {
    std::fs::write(
        path,
        "experiment.domain=lever\n\
         experiment.seed=3\n\
         experiment.unpaired_count=60\n\
         experiment.eval_episodes=30\n\
         train.batches=3000\n\
         train.batch_size=32\n\
         train.retry_limit=3\n\
         new.batches=50\n",
    )
    .unwrap();
}

#[test]
fn train_new_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("lever.conf");
    write_small_lever_config(&conf);
    let base_dir = tmp.path().join("base");
    let new_dir = tmp.path().join("new");

    let out = asp()
        .arg("train-base")
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(&base_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(base_dir.join("base-commnet.ckpt").exists());
    assert!(base_dir.join("base-quality.json").exists());

    let out = asp()
        .args(["train-new", "--method", "PC", "--paired", "2"])
        .arg("--base")
        .arg(&base_dir)
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(&new_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(new_dir.join("new-commnet.ckpt").exists());

    let out = asp()
        .args(["evaluate", "--method", "PC", "--paired", "2"])
        .arg("--base")
        .arg(&base_dir)
        .arg("--new")
        .arg(&new_dir)
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(tmp.path().join("eval"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let results = std::fs::read_to_string(tmp.path().join("eval").join("results.csv")).unwrap();
    assert!(results.starts_with("trial_id,domain,method,paired,unpaired,direction,score\n"));
    assert!(results.contains(",lever,PC,2,"));
}
