use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddpm-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dump_schedule_to_stdout() {
    let o = lab(&["dump-schedule", "--set", "T=10", "--set", "schedule=linear", "--set", "design=simple"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,beta,alpha,alpha_bar,eta,sigma2");
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("1,1.0000000000000000e-4,"));
    assert!(lines[10].starts_with("10,2.0000000000000000e-2,"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rate.cfg");
    fs::write(&cfg, "# short grid\nT = 100, 200, 400\nd = 32\n").unwrap();
    let out = dir.path().join("rate.csv");
    let o = lab(&["rate", "--config", path_str(&cfg), "--set", "k=4", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("slope of log KL vs log T"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("T,kl_exact,step_kl_sum,init_kl,error\n100,"));
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["rate", "--set", "typo=1"]).status.code(), Some(2));
    assert_eq!(lab(&["rate", "--set", "no-equals"]).status.code(), Some(2));
    assert_eq!(lab(&["rate", "--set", "d=sixty"]).status.code(), Some(2));
    assert_eq!(lab(&["figure1", "--set", "schedule=cosine"]).status.code(), Some(2));
    assert_eq!(lab(&["theorem2", "--set", "d=10", "--set", "k=8"]).status.code(), Some(2));
    let missing = dir.path().join("absent.cfg");
    assert_eq!(lab(&["rate", "--config", path_str(&missing)]).status.code(), Some(2));
    assert_eq!(lab(&["rate", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(lab(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn figure1_is_byte_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = lab(&[
            "figure1",
            "--set",
            "T=50,100",
            "--set",
            "d=10,100",
            "--set",
            "tv_samples=5000",
            "--set",
            "timing=false",
            "--seed",
            "17",
            "--threads",
            threads,
            "--out",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("3", "b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2);
    assert!(text.lines().nth(1).unwrap().starts_with("star,linear,50,10,8,"));
}

#[test]
fn theorem2_grid_dominance() {
    let o = lab(&["theorem2", "--set", "T=200", "--set", "eta_shift_count=5", "--set", "sigma_scale_count=5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let diff: f64 = f[7].parse().unwrap();
        assert!(diff >= -1e-12, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 3 * 5 * 5);
}

#[test]
fn perturb_with_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tv.csv");
    let traj = dir.path().join("traj.csv");
    let o = lab(&[
        "perturb",
        "--set",
        "T=40",
        "--set",
        "d=6",
        "--set",
        "k=2",
        "--set",
        "n=2000",
        "--set",
        "tv_samples=2000",
        "--set",
        "eps=0,0.1",
        "--out",
        path_str(&out),
        "--trajectory-out",
        path_str(&traj),
        "--trajectory-count",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 3);
    let traj = fs::read_to_string(traj).unwrap();
    assert!(traj.starts_with("trajectory_id,t,coord_0,"));
    // 3 trajectories, states Y_40 .. Y_1
    assert_eq!(traj.lines().count(), 1 + 3 * 40);
}

#[test]
fn covering_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("cloud.csv");
    let rows: String = (0..50).map(|i| format!("{},0,0\n", i as f64 / 49.0)).collect();
    fs::write(&cloud, rows).unwrap();
    let o = lab(&["covering", "--set", &format!("input={}", cloud.display()), "--set", "eps=0.25"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("net_rank,point_index,eps,net_size,estimate,cover_radius\n0,0,"));
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let size: usize = first[3].parse().unwrap();
    assert_eq!(text.lines().count(), 1 + size);
    assert!(size >= 2 && size <= 5);
    let o = lab(&["covering", "--set", &format!("input={}", cloud.display()), "--set", "grid_dim=2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.txt");
    let o = lab(&["validate", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.contains("PASS analytic.theorem2_dominance"));
    assert!(report.trim_end().ends_with("checks, 0 failed"));
    let again = lab(&["validate"]);
    assert_eq!(stdout(&again), report);
}
