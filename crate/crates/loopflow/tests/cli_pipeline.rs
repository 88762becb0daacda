// End-to-end tests of the installed binary: synth -> train -> refine -> eval,
// plus the documented edge cases and the exit-code contract
// (0 success, 1 verification failure, 2 input/parse error).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use loopflow::frames::apply_rigid;
use loopflow::model::checkpoint::{load_checkpoint, save_checkpoint};
use loopflow::model::{init_params, ModelParams};
use loopflow::pdb::{parse_pdb_backbone, write_pdb_backbone};
use loopflow::so3::exp_rotvec;
use loopflow::structure::helix_chain;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_loopflow"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> (i32, String, String) {
    let out = cmd.output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Writes `n` placed-helix targets (8 residues, chain A) into `dir`.
fn write_targets(dir: &Path, n: usize, seed: u64) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let helix = helix_chain(8, 'A').unwrap();
            let rot = exp_rotvec(&Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let t = Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
            let chain = apply_rigid(&helix, &rot, &t);
            let path = dir.join(format!("target_{i:02}.pdb"));
            std::fs::write(&path, write_pdb_backbone(&[chain])).unwrap();
            path
        })
        .collect()
}

fn write_config(path: &Path, extra: &str) -> PathBuf {
    let base = "hidden=8\nhead_hidden=8\nepochs=3\nbatch_size=1\nloss=regression\n";
    std::fs::write(path, format!("{base}{extra}")).unwrap();
    path.to_path_buf()
}

/// ATOM/TER records only, i.e. the coordinate payload without REMARKs.
fn atom_records(text: &str) -> String {
    text.lines()
        .filter(|l| l.starts_with("ATOM") || l.starts_with("TER"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets");
    std::fs::create_dir(&targets).unwrap();
    write_targets(&targets, 4, 1);
    let priors = dir.path().join("priors");

    run_ok(bin()
        .args(["synth", "--targets"])
        .arg(&targets)
        .args(["--cdr", "A:3-6", "--sigma-x", "0.5", "--sigma-r", "0.1", "--seed", "7", "--out"])
        .arg(&priors));
    let manifest = priors.join("manifest.json");
    assert!(manifest.exists());
    let manifest_text = std::fs::read_to_string(&manifest).unwrap();
    assert_eq!(manifest_text.matches("\"target\"").count(), 4);

    let config = write_config(&dir.path().join("run.cfg"), "");
    let ckpt = dir.path().join("model.ckpt");
    run_ok(bin()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&ckpt));
    assert!(ckpt.exists());
    let loss_csv = std::fs::read_to_string(dir.path().join("model.loss.csv")).unwrap();
    assert!(loss_csv.contains("# epochs=3"), "config echo missing:\n{loss_csv}");
    assert!(loss_csv.contains("epoch,loss_r3,loss_so3,loss_2d,total"));
    assert_eq!(loss_csv.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), 4); // header + 3 epochs

    let refined = dir.path().join("refined");
    std::fs::create_dir(&refined).unwrap();
    for entry in std::fs::read_dir(&priors).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "pdb") {
            let out = refined.join(path.file_name().unwrap());
            let trace = dir.path().join("trace.csv");
            run_ok(bin()
                .args(["refine", "--prior"])
                .arg(&path)
                .arg("--checkpoint")
                .arg(&ckpt)
                .args(["--cdr", "A:3-6", "--config"])
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .arg("--trace")
                .arg(&trace));
            let text = std::fs::read_to_string(&out).unwrap();
            assert!(text.contains("REMARK 100 LOOPFLOW epochs=3"), "config echo missing");
            assert!(!parse_pdb_backbone(&text).unwrap().is_empty());
        }
    }

    let metrics = dir.path().join("metrics.csv");
    let out = run_ok(bin()
        .args(["eval", "--manifest"])
        .arg(&manifest)
        .arg("--refined")
        .arg(&refined)
        .arg("--out")
        .arg(&metrics)
        .args(["--jobs", "2"]));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.contains("id,cdr,prior_rmsd,refined_rmsd,improvement,final_energy,wall_time,status"));
    assert_eq!(csv.lines().filter(|l| l.ends_with(",ok")).count(), 4);
    assert!(csv.contains("# summary rows=4 failed=0"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean_improvement"));
}

#[test]
fn synth_sigma_zero_copies_targets() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets");
    std::fs::create_dir(&targets).unwrap();
    let target_paths = write_targets(&targets, 3, 2);
    let priors = dir.path().join("priors");
    run_ok(bin()
        .args(["synth", "--targets"])
        .arg(&targets)
        .args(["--cdr", "A:3-6", "--sigma-x", "0", "--sigma-r", "0", "--seed", "1", "--out"])
        .arg(&priors));
    for target in &target_paths {
        let round_trip = write_pdb_backbone(
            &parse_pdb_backbone(&std::fs::read_to_string(target).unwrap()).unwrap(),
        );
        let prior = std::fs::read_to_string(priors.join(target.file_name().unwrap())).unwrap();
        assert_eq!(prior, round_trip, "sigma=0 prior must copy the target verbatim");
    }
}

#[test]
fn train_epochs_zero_keeps_init_params() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets");
    std::fs::create_dir(&targets).unwrap();
    write_targets(&targets, 2, 3);
    let priors = dir.path().join("priors");
    run_ok(bin()
        .args(["synth", "--targets"])
        .arg(&targets)
        .args(["--cdr", "A:3-6", "--sigma-x", "0.5", "--sigma-r", "0.1", "--seed", "3", "--out"])
        .arg(&priors));
    let config = write_config(&dir.path().join("run.cfg"), "epochs=0\nseed=42\n");
    let ckpt = dir.path().join("model.ckpt");
    run_ok(bin()
        .args(["train", "--manifest"])
        .arg(priors.join("manifest.json"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&ckpt));
    let params = load_checkpoint(&ckpt).unwrap();
    assert_eq!(params, init_params(42, params.dims));
}

#[test]
fn refine_is_identity_with_zero_model_and_beta_zero() {
    let dir = tempfile::tempdir().unwrap();
    let prior_chain = vec![helix_chain(8, 'A').unwrap()];
    let prior_path = dir.path().join("prior.pdb");
    std::fs::write(&prior_path, write_pdb_backbone(&prior_chain)).unwrap();

    let mut cfg = loopflow::config::RunConfig::default();
    cfg.hidden = 8;
    cfg.head_hidden = 8;
    let ckpt = dir.path().join("zero.ckpt");
    save_checkpoint(&ckpt, &ModelParams::zeros(cfg.model_dims())).unwrap();

    let config = write_config(&dir.path().join("run.cfg"), "beta=0\n");
    let out = dir.path().join("refined.pdb");
    run_ok(bin()
        .args(["refine", "--prior"])
        .arg(&prior_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--cdr", "A:3-6", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out));

    let round_trip = write_pdb_backbone(
        &parse_pdb_backbone(&std::fs::read_to_string(&prior_path).unwrap()).unwrap(),
    );
    let refined = std::fs::read_to_string(&out).unwrap();
    assert_eq!(atom_records(&refined), atom_records(&round_trip));
}

#[test]
fn refine_trace_has_one_row_per_step_with_monotone_t() {
    let dir = tempfile::tempdir().unwrap();
    let prior_chain = vec![helix_chain(8, 'A').unwrap()];
    let prior_path = dir.path().join("prior.pdb");
    std::fs::write(&prior_path, write_pdb_backbone(&prior_chain)).unwrap();
    let mut cfg = loopflow::config::RunConfig::default();
    cfg.hidden = 8;
    cfg.head_hidden = 8;
    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &init_params(4, cfg.model_dims())).unwrap();

    let config = write_config(&dir.path().join("run.cfg"), "steps=5\n");
    let trace = dir.path().join("trace.csv");
    run_ok(bin()
        .args(["refine", "--prior"])
        .arg(&prior_path)
        .arg("--checkpoint")
        .arg(&ckpt)
        .args(["--cdr", "A:3-6", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("refined.pdb"))
        .arg("--trace")
        .arg(&trace));
    let text = std::fs::read_to_string(&trace).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step,"))
        .collect();
    assert_eq!(rows.len(), 5);
    let ts: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(ts.windows(2).all(|w| w[1] > w[0]), "t not monotone: {ts:?}");
    assert_eq!(ts[0], 0.0);
}

/// Builds a manifest plus matching prior/target files where the prior is the
/// target with the selected residues rigidly translated by `shift` A.
fn rmsd_fixture(dir: &Path, shift: f64) -> (PathBuf, PathBuf) {
    let target = helix_chain(8, 'A').unwrap();
    let mut prior = target.clone();
    for i in 2..=5 {
        prior.residues[i].frame.x += Vector3::new(shift, 0.0, 0.0);
    }
    let target_path = dir.join("t0.pdb");
    std::fs::write(&target_path, write_pdb_backbone(&[target])).unwrap();
    let priors = dir.join("priors");
    std::fs::create_dir_all(&priors).unwrap();
    std::fs::write(priors.join("t0.pdb"), write_pdb_backbone(&[prior])).unwrap();
    let manifest = dir.join("manifest.json");
    std::fs::write(
        &manifest,
        format!(
            r#"{{"pairs":[{{"target":{:?},"prior":"priors/t0.pdb","selections":["A:3-6"]}}],"noise":{{"sigma_x":0.0,"sigma_r":0.0,"seed":0}}}}"#,
            target_path.to_str().unwrap()
        ),
    )
    .unwrap();
    (manifest, priors)
}

#[test]
fn eval_reports_known_rmsd_and_identity_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, priors) = rmsd_fixture(dir.path(), 5.0);

    // refined = priors: improvement must be exactly 0%.
    let metrics = dir.path().join("same.csv");
    run_ok(bin()
        .args(["eval", "--manifest"])
        .arg(&manifest)
        .arg("--refined")
        .arg(&priors)
        .arg("--out")
        .arg(&metrics));
    let csv = std::fs::read_to_string(&metrics).unwrap();
    let row = csv.lines().find(|l| l.starts_with("t0,")).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[2], "5.0000", "prior RMSD of a 5 A shift: {row}");
    assert_eq!(fields[3], "5.0000");
    assert_eq!(fields[4], "0.00", "improvement for refined=prior: {row}");

    // refined = targets: refined RMSD must be exactly 0.
    let refined = dir.path().join("as_target");
    std::fs::create_dir(&refined).unwrap();
    std::fs::copy(dir.path().join("t0.pdb"), refined.join("t0.pdb")).unwrap();
    let metrics2 = dir.path().join("target.csv");
    run_ok(bin()
        .args(["eval", "--manifest"])
        .arg(&manifest)
        .arg("--refined")
        .arg(&refined)
        .arg("--out")
        .arg(&metrics2));
    let csv2 = std::fs::read_to_string(&metrics2).unwrap();
    let row2 = csv2.lines().find(|l| l.starts_with("t0,")).unwrap();
    let fields2: Vec<&str> = row2.split(',').collect();
    assert_eq!(fields2[3], "0.0000", "refined=target RMSD: {row2}");
    assert_eq!(fields2[4], "100.00");
}

#[test]
fn identical_seeds_reproduce_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("targets");
    std::fs::create_dir(&targets).unwrap();
    write_targets(&targets, 2, 5);

    let mut artifacts: Vec<Vec<u8>> = Vec::new();
    for tag in ["a", "b"] {
        let priors = dir.path().join(format!("priors_{tag}"));
        run_ok(bin()
            .args(["synth", "--targets"])
            .arg(&targets)
            .args(["--cdr", "A:3-6", "--sigma-x", "0.5", "--sigma-r", "0.1", "--seed", "9", "--out"])
            .arg(&priors));
        let config = write_config(&dir.path().join(format!("{tag}.cfg")), "seed=11\n");
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        run_ok(bin()
            .args(["train", "--manifest"])
            .arg(priors.join("manifest.json"))
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&ckpt));
        let refined = dir.path().join(format!("refined_{tag}.pdb"));
        run_ok(bin()
            .args(["refine", "--prior"])
            .arg(priors.join("target_00.pdb"))
            .arg("--checkpoint")
            .arg(&ckpt)
            .args(["--cdr", "A:3-6", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&refined));
        artifacts.push(std::fs::read(priors.join("target_00.pdb")).unwrap());
        artifacts.push(std::fs::read(dir.path().join(format!("{tag}.loss.csv"))).unwrap());
        artifacts.push(std::fs::read(&refined).unwrap());
    }
    assert_eq!(artifacts[0], artifacts[3], "synth priors differ across runs");
    assert_eq!(artifacts[1], artifacts[4], "loss CSVs differ across runs");
    assert_eq!(artifacts[2], artifacts[5], "refined PDBs differ across runs");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Missing input: parse/input error, code 2.
    let (code, _, err) = exit_code(bin()
        .args(["refine", "--prior", "/nonexistent/prior.pdb", "--checkpoint", "/nonexistent/m.ckpt"])
        .args(["--cdr", "A:3-6", "--out"])
        .arg(dir.path().join("out.pdb")));
    assert_eq!(code, 2, "stderr: {err}");
    assert!(err.contains("prior.pdb"), "stderr should name the path: {err}");

    // Bad config value: code 2.
    let bad_cfg = dir.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "steps=0\n").unwrap();
    let (code, _, err) = exit_code(bin()
        .args(["refine", "--prior", "x.pdb", "--checkpoint", "m.ckpt", "--cdr", "A:1-2", "--config"])
        .arg(&bad_cfg)
        .args(["--out", "o.pdb"]));
    assert_eq!(code, 2, "stderr: {err}");

    // Eval with one refined file missing: partial failure, code 1, row kept.
    let (manifest, priors) = rmsd_fixture(dir.path(), 2.0);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let metrics = dir.path().join("partial.csv");
    let (code, out, _) = exit_code(bin()
        .args(["eval", "--manifest"])
        .arg(&manifest)
        .arg("--refined")
        .arg(&empty)
        .arg("--out")
        .arg(&metrics));
    assert_eq!(code, 1, "stdout: {out}");
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("t0,") && l.ends_with(",failed")), "{csv}");
    assert!(csv.contains("failed=1"), "{csv}");
    drop(priors);

    // Gradcheck: clean pass is 0, an injected fault is 1 and names the term.
    let (code, out, _) = exit_code(bin().args(["gradcheck", "--seed", "1"]));
    assert_eq!(code, 0, "stdout: {out}");
    assert!(out.contains("PASS"));
    let (code, out, _) = exit_code(bin().args(["gradcheck", "--seed", "1", "--corrupt", "model"]));
    assert_eq!(code, 1, "stdout: {out}");
    assert!(out.contains("FAIL") && out.contains("model encoder.w[0]"), "{out}");
}
