//! End-to-end tests of the `difflab` binary: exit codes, CSV layout,
//! config rejection, and byte-identical reruns.

use std::path::Path;
use std::process::{Command, Output};

fn difflab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difflab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn difflab")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn schedule_dump_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = difflab(&["schedule", "--T", "16", "--c1", "1"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,beta,alpha,alpha_bar");
    assert_eq!(lines.len(), 18); // header + 16 rows + metadata
    assert!(lines[17].starts_with("# tool_version="));
    assert!(lines[17].contains("master_seed=0"));
    // beta_1 = 16^-2
    assert!(lines[1].starts_with("1,3.9062500000000000e-3"));
}

#[test]
fn numeric_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = difflab(&["schedule", "--T", "4"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("schedule out of range"), "stderr: {err}");
}

#[test]
fn unknown_config_key_exits_2_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[schedule]\nt = 16\nmispelled = 3\n",
    )
    .unwrap();
    let out = difflab(&["--config", "bad.toml", "schedule"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("mispelled"), "stderr: {err}");
}

#[test]
fn config_error_leaves_no_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "nonsense = [[[\n").unwrap();
    let out = difflab(
        &["--config", "bad.toml", "--out", "x.csv", "schedule"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn sample_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sample",
        "--T",
        "16",
        "--c1",
        "1",
        "--target",
        "low_rank_gaussian",
        "--d",
        "4",
        "--k",
        "2",
        "--family",
        "ddpm_original",
        "--n",
        "500",
        "--seed",
        "42",
    ];
    let a = difflab(&args, dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let mut args_threads: Vec<&str> = args.to_vec();
    args_threads.extend_from_slice(&["--threads", "1"]);
    let b = difflab(&args_threads, dir.path());
    assert!(b.status.success());
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn analytic_sample_writes_trajectory_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = difflab(
        &[
            "sample",
            "--T",
            "32",
            "--target",
            "low_rank_gaussian",
            "--d",
            "4",
            "--k",
            "1",
            "--family",
            "ddim_original",
            "--analytic",
            "--traj-out",
            "traj.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert!(text.starts_with("t,coord,variance\n"));
    // 32 time indices x 4 coordinates + header + metadata
    assert_eq!(text.lines().count(), 32 * 4 + 2);
}

#[test]
fn lowerbound_grid_from_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("lb.toml"),
        r#"
            [target]
            kind = "low_rank_gaussian"
            d = 4
            k = 2

            [schedule]
            t = 64

            [lowerbound]
            t_step = 20
            scales = [0.0, 1.0, 2.0]

            [mc]
            n_samples = 4000
            master_seed = 9
        "#,
    )
    .unwrap();
    let out = difflab(&["--config", "lb.toml", "lowerbound"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "eta_scale,sigma_scale,lower_bound,tv_mc,tv_ci,violation"
    );
    assert_eq!(lines.len(), 1 + 9 + 1);
    assert!(lines.iter().skip(1).take(9).all(|l| l.ends_with("false")));
    assert!(text.contains("master_seed=9"));
}

#[test]
fn audit_and_trace_and_sweep_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = difflab(
        &[
            "audit",
            "--t-grid",
            "16,32",
            "--families",
            "ddpm_original",
            "--xi-values",
            "1.0",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("T,family,t,eta,sigma,residual,constraint23\n"));

    let out = difflab(
        &[
            "trace",
            "--T",
            "16",
            "--c1",
            "1",
            "--target",
            "diag_gaussian",
            "--variances",
            "1.0,0.0",
            "--n",
            "2000",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).starts_with("t,trace_estimate,std_error\n"));

    let out = difflab(
        &[
            "sweep",
            "--d",
            "8",
            "--k",
            "2",
            "--t-grid",
            "32,64",
            "--families",
            "ddim_original",
            "--n",
            "1000",
            "--seed",
            "3",
            "--out",
            "sweep.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.starts_with("T,d,k,family,proxy_D,tv_lower,tv_upper,tv_mc,tv_ci\n"));
    assert!(text.contains("# slope family=ddim_original value="));

    let out = difflab(
        &[
            "score-error",
            "--T",
            "128",
            "--target",
            "low_rank_gaussian",
            "--d",
            "4",
            "--k",
            "1",
            "--family",
            "ddpm_original",
            "--epsilons",
            "0.0,0.01,0.1",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).starts_with("epsilon,proxy_D,mean_shift\n"));
}

#[test]
fn coeffs_respects_xi_flag() {
    let dir = tempfile::tempdir().unwrap();
    let a = difflab(
        &[
            "coeffs",
            "--T",
            "16",
            "--family",
            "generalized_xi",
            "--xi",
            "1.0",
        ],
        dir.path(),
    );
    assert!(a.status.success());
    let b = difflab(
        &["coeffs", "--T", "16", "--family", "ddpm_original"],
        dir.path(),
    );
    assert!(b.status.success());
    // xi = 1 coefficients match DdpmOriginal to high precision: compare the
    // eta column at a mid step
    let row = |s: &str, t: usize| {
        s.lines()
            .nth(t)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    let (ea, eb) = (row(&stdout(&a), 8), row(&stdout(&b), 8));
    assert!((ea - eb).abs() / eb < 1e-12, "{ea} vs {eb}");
}
