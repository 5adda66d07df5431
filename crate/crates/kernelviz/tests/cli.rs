use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kernelviz::runstore::load_run;
use serde_json::Value;

const FAST: [&str; 10] = ["--frames", "16", "--height", "16", "--width", "16", "--s1-steps", "15", "--s2-steps", "15"];

fn kv(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kernelviz"))
        .args(args)
        .env("KERNELVIZ_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_subdir(root: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn help_documents_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let expected: [(&str, &[&str]); 6] = [
        ("maximize", &["--kernel", "--fourier", "--s1-steps", "--s1-lr", "--frames", "--fourier-gain", "--stage1-config", "--seed", "--out"]),
        ("decompose", &["--input", "--s2-steps", "--s2-lr", "--w-recon", "--w-smooth-deform", "--w-smooth-static", "--w-static", "--stage2-config"]),
        ("visualize", &["--run", "--dest", "--flow-norm", "--flow-vmax"]),
        ("pipeline", &["--kernel", "--jobs", "--adapter", "--checkpoint", "--net-seed", "--s1-steps", "--s2-steps", "--flow-norm"]),
        ("ablate", &["--kernel", "--jobs", "--dest", "--fourier-gain", "--w-smooth-deform"]),
        ("list-kernels", &["--adapter", "--checkpoint", "--net-seed", "--seed"]),
    ];
    for (cmd, flags) in expected {
        let o = kv(&[cmd, "--help"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
        // Every option line is followed by a description.
        for line in text.lines().filter(|l| l.trim_start().starts_with("--")) {
            let desc = line.trim_start().split_once("  ").map(|(_, d)| d.trim()).unwrap_or("");
            let next_has_doc = text.lines().skip_while(|l| *l != line).nth(1).is_some_and(|n| n.starts_with("          "));
            assert!(!desc.is_empty() || next_has_doc, "{cmd}: undocumented {line}");
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(kv(&["pipeline"], tmp.path()).status.code(), Some(2));
    assert_eq!(kv(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert_eq!(kv(&["maximize", "--kernel", "no-slash"], tmp.path()).status.code(), Some(2));
}

#[test]
fn pipeline_writes_a_loadable_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["pipeline", "--kernel", "layer1/0", "--seed", "7"];
    args.extend(FAST);
    let o = kv(&args, tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("run_id"));
    let run = only_subdir(tmp.path());
    let (manifest, _) = load_run(&run).unwrap();
    let pngs = manifest.artifacts.iter().filter(|a| a.ends_with(".png")).count();
    assert_eq!(pngs, 33);
    assert!(manifest.artifacts.contains(&"animation.gif".to_string()));
    assert_eq!(manifest.seeds.stage1, 7);
}

#[test]
fn unknown_kernel_exits_three_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kv(&["pipeline", "--kernel", "layer1/99", "--s1-steps", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("layer1/99") && err.lines().count() == 1, "{err}");
    assert!(fs::read_dir(tmp.path()).map(|d| d.count() == 0).unwrap_or(true));
    let o = kv(&["pipeline", "--kernel", "layer1/0", "--adapter", "i3d"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("i3d"));
}

#[test]
fn repeated_pipeline_is_identical_modulo_timestamp() {
    let manifests: Vec<Value> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let mut args = vec!["pipeline", "--kernel", "layer2/3", "--seed", "11"];
            args.extend(FAST);
            assert_eq!(kv(&args, tmp.path()).status.code(), Some(0));
            let run = only_subdir(tmp.path());
            let mut m: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
            m.as_object_mut().unwrap().remove("created_at");
            for f in ["video.tensor", "static_000.png", "flow_003.png", "animation.gif"] {
                m[f] = Value::String(format!("{:?}", fs::read(run.join(f)).unwrap()));
            }
            m
        })
        .collect();
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn same_run_id_twice_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["pipeline", "--kernel", "layer1/0"];
    args.extend(FAST);
    assert_eq!(kv(&args, tmp.path()).status.code(), Some(0));
    let o = kv(&args, tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("already exists"));
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("s1.toml");
    fs::write(&cfg, "steps = 4\nheight = 8\n").unwrap();
    let out = tmp.path().join("runs");
    let cfg_arg = cfg.to_str().unwrap();
    let mut args = vec!["pipeline", "--kernel", "layer1/0", "--stage1-config", cfg_arg];
    args.extend(FAST);
    assert_eq!(kv(&args, &out).status.code(), Some(0));
    let (m, t) = load_run(&only_subdir(&out)).unwrap();
    assert_eq!((m.stage1.steps, m.stage1.height, m.stage1.width), (4, 8, 16));
    assert_eq!(t.video.shape(), [16, 8, 16, 3]);

    fs::write(&cfg, "stepz = 4\n").unwrap();
    let o = kv(&args, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("stepz"));
}

#[test]
fn maximize_decompose_visualize_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let m_dir = root.join("m");
    let o = kv(
        &["maximize", "--kernel", "layer1/2", "--frames", "4", "--height", "8", "--width", "8", "--s1-steps", "5", "--dest", &s(&m_dir)],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(m_dir.join("video_003.png").is_file());
    let d_dir = root.join("d");
    let o = kv(
        &["decompose", "--input", &s(&m_dir.join("video.tensor")), "--s2-steps", "5", "--dest", &s(&d_dir)],
        root,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = kv(&["visualize", "--run", &s(&d_dir), "--flow-norm", "fixed", "--flow-vmax", "0.5"], root);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rendered = fs::read_dir(d_dir.join("render")).unwrap().count();
    assert_eq!(rendered, 4 + 1 + 3 + 1 + 1);
}

#[test]
fn list_kernels_shows_designations() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kv(&["list-kernels"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 8 + 16 + 16);
    assert!(text.lines().nth(1).unwrap().contains("direction_deg 90"));
}
