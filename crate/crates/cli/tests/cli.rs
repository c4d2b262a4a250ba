use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TEXT: &str = "The whale surfaced beside the ship and the crew watched in silence. \
Congress shall assemble at least once in every year, and the union endures. ";

fn detour(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detour")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny corpus plus a config that trains for two steps per phase.
fn setup(dir: &Path, encoder: &str, sweep: &str) -> PathBuf {
    let corpus = dir.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    fs::write(corpus.join("a.txt"), TEXT.repeat(30)).unwrap();
    let cfg = format!(
        r#"seed = 3
output_dir = "{out}"

[corpus]
paths = ["{corpus}"]
vocab = 300

[task]
seg_len = 24
m = 16
continuation = 8
n_train = 6
n_val = 3

[decoder]
layers = 1
d = 16
heads = 2
head_dim = 8
ffn_dim = 32
rope_base = 10000.0
vocab = 300

[encoder]
{encoder}

[train.recon]
lr_peak = 1e-3
batch_size = 2
steps = 2

[train.lm]
lr_peak = 1e-3
batch_size = 2
steps = 2
{sweep}"#,
        out = dir.join("runs").display(),
        corpus = corpus.display(),
    );
    let path = dir.join("exp.toml");
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn stages_run_in_order_and_report_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path(), "kind = \"mean_pool\"\nw = 4\ns = 4", "");
    let cfg = cfg.to_str().unwrap();

    let no_data = detour(&["train-recon", "--config", cfg]);
    assert_eq!(no_data.status.code(), Some(2));
    assert!(stderr(&no_data).contains("/tokenizer.txt"), "{}", stderr(&no_data));

    let data = detour(&["prepare-data", "--config", cfg]);
    assert!(data.status.success(), "{}", stderr(&data));
    let data_dir = PathBuf::from(stdout(&data).trim());
    assert!(data_dir.join("manifest.json").exists());
    assert!(data_dir.join("tokenizer.txt").exists());

    let lm_first = detour(&["train-lm", "--config", cfg]);
    assert_eq!(lm_first.status.code(), Some(2));
    let err = stderr(&lm_first);
    assert!(err.contains("missing artifact") && err.contains("/recon.ckpt"), "{err}");

    for stage in ["train-recon", "train-lm"] {
        let o = detour(&[stage, "--config", cfg]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let eval = detour(&["eval", "--config", cfg]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("| Mean pool |"));

    let run_dir = fs::read_dir(tmp.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_str().unwrap().starts_with("run-"))
        .unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    let before = fs::read(run_dir.join("results_lm.md")).unwrap();
    fs::remove_file(run_dir.join("results_lm.md")).unwrap();
    let rep = detour(&["report", "--dir", run_dir.to_str().unwrap()]);
    assert!(rep.status.success(), "{}", stderr(&rep));
    assert_eq!(fs::read(run_dir.join("results_lm.md")).unwrap(), before);

    let reseeded = detour(&["report", "--config", cfg, "--seed", "4"]);
    assert_eq!(reseeded.status.code(), Some(2));
    assert!(stderr(&reseeded).contains("rows_lm.json"));
}

#[test]
fn sweep_emits_one_report_with_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = r#"
[sweep]
baseline = 1

[[sweep.encoders]]
kind = "hierarchical"
levels = 1

[[sweep.encoders]]
kind = "truncation"
n_keep = 8
"#;
    let cfg = setup(tmp.path(), "kind = \"hierarchical\"\nlevels = 1", sweep);
    let o = detour(&["sweep", "--config", cfg.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("Truncation,-,scratch,n=8,9,"), "{out}");
    assert!(out.contains(",+0.00\n") || out.contains(",0.00\n") || out.contains(",-0.00\n"), "{out}");
    let hier = out.lines().find(|l| l.starts_with("Hierarchical,recon,recon,t=8,10,")).expect(&out);
    assert!(!hier.ends_with(",-"), "{hier}");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    for (encoder, field) in [
        ("kind = \"truncation\"\nn_keep = 40", "encoder.n_keep"),
        ("kind = \"mean_pool\"\nw = 2\ns = 3", "encoder"),
        ("kind = \"optical\"\ntier = \"tiny\"\ntokens_per_row = 4\nrows = 2\ntiers = { tiny = 1, small = 1, base = 1, large = 1 }", "encoder.tier"),
    ] {
        let cfg = setup(tmp.path(), encoder, "");
        let o = detour(&["prepare-data", "--config", cfg.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{encoder}");
        assert!(stderr(&o).contains(field), "{encoder}: {}", stderr(&o));
    }
    let cfg = setup(tmp.path(), "kind = \"truncation\"\nn_keep = 8", "");
    let o = detour(&["train-recon", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("encoder.kind"), "{}", stderr(&o));
}

#[test]
fn gradcheck_prints_a_passing_table() {
    let o = detour(&["gradcheck", "--seeds", "1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("check"));
    assert!(out.contains("model[hierarchical]"));
    assert!(!out.contains("false"));

    let strict = detour(&["gradcheck", "--seeds", "1", "--tol", "1e-30"]);
    assert_eq!(strict.status.code(), Some(1));
}
