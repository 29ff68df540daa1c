use std::path::Path;
use std::process::{Command, Output};

fn rjpo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rjpo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn config_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path();
    for args in [
        &["toy", "--set", "rho=1"][..],
        &["toy", "--set", "n=0"],
        &["adapt", "--set", "kappa=1.5"],
        &["curve", "--epsilon-grid", ""],
        &["toy", "--sampler", "gibbs"],
        &["toy", "--bogus"],
        &["superres", "--set", "burn_in=1000"],
        &["superres", "--set", "dims=8x8"],
    ] {
        let r = rjpo(args, o);
        assert_eq!(r.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
}

#[test]
fn unwritable_output_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let r = rjpo(&["toy", "--n-max", "50", "--n-min", "5"], &file.join("sub"));
    assert_eq!(r.status.code(), Some(3));
    let missing = rjpo(&["toy", "--config", "/nonexistent/cfg.txt"], tmp.path());
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn toy_outputs_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a/b");
    let r = rjpo(&["toy", "--n-max", "3000", "--n-min", "300", "--seed", "5"], &out);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(header(&out.join("rmse.csv")), "sampler,epsilon,rmse_mean,rmse_cov,essr,cces,mean_alpha,mean_J");
    assert_eq!(header(&out.join("chain_rjpo.csv")), "iter,alpha,accepted,cg_iters,epsilon,x_0,x_1");
    let mean = std::fs::read_to_string(out.join("mean.csv")).unwrap();
    assert_eq!(mean.lines().count(), 21);
    let meta = json(&out.join("metadata.json"));
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["n"], "20");
    assert_eq!(meta["config"]["rho"], "8e-1");
    assert!(meta["generator"].as_str().unwrap().contains("ChaCha"));
    assert_eq!(meta["laplacian_stencil"].as_array().unwrap().len(), 9);
    assert!(meta["build"].as_str().unwrap().starts_with("rjpo "));
}

#[test]
fn toy_with_rho_zero_gives_independent_epo_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(
        &["toy", "--set", "rho=0", "--sampler", "epo", "--n-max", "5000", "--n-min", "100"],
        tmp.path(),
    );
    assert!(r.status.success());
    let s = json(&tmp.path().join("summary.json"));
    let essr = s["samplers"]["epo"]["essr"].as_f64().unwrap();
    assert!(essr > 0.9, "{essr}");
}

#[test]
fn curve_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(
        &["curve", "--n-max", "3000", "--n-min", "300", "--epsilon-grid", "1e-5,1e-3,1e-1"],
        tmp.path(),
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let acc = std::fs::read_to_string(tmp.path().join("acceptance.csv")).unwrap();
    let lines: Vec<&str> = acc.lines().collect();
    assert_eq!(lines[0], "epsilon,mean_alpha,mean_J");
    assert_eq!(lines.len(), 4);

    // E-PO at the default length, 10^4 samples.
    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(&["curve", "--sampler", "epo", "--epsilon-grid", "1e-3"], tmp.path());
    assert!(r.status.success());
    let curve = std::fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    let epo = curve.lines().find(|l| l.starts_with("epo,")).unwrap();
    let essr: f64 = epo.split(',').nth(4).unwrap().parse().unwrap();
    assert!((essr - 1.0).abs() < 0.05, "{essr}");
}

#[test]
fn adapt_emits_one_trajectory_per_target() {
    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(&["adapt", "--n-max", "300", "--alpha-t", "0.5,0.9"], tmp.path());
    assert!(r.status.success());
    let t = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(t.lines().next().unwrap(), "alpha_t,n,epsilon,alpha,J");
    assert_eq!(t.lines().count(), 601);
    let s = json(&tmp.path().join("summary.json"));
    assert_eq!(s["runs"].as_array().unwrap().len(), 2);

    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(&["adapt", "--mode", "min_cces", "--n-max", "300"], tmp.path());
    assert!(r.status.success());
    assert_eq!(header(&tmp.path().join("trajectory.csv")), "n,epsilon,alpha,J,residual");
}

#[test]
fn superres_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let r = rjpo(
        &["superres", "--set", "dims=32x32", "--set", "fwhm=2", "--set", "iterations=15", "--set", "burn_in=5"],
        tmp.path(),
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let img = rjpo::image::read_pgm(&tmp.path().join("posterior_mean.pgm")).unwrap();
    assert_eq!(img.dims(), (32, 32));
    let frame = rjpo::image::read_pgm(&tmp.path().join("frame_0.pgm")).unwrap();
    assert_eq!(frame.dims(), (16, 16));
    assert_eq!(header(&tmp.path().join("chains.csv")), "iter,gamma_y,gamma_x,alpha,cg_iters");
    let s = json(&tmp.path().join("summary.json"));
    assert!(s["run"]["peak_cg_iters"].as_u64().unwrap() > 0);
    assert!(s["run"]["gamma_y_sd"].as_f64().unwrap() > 0.0);

    // A ground-truth image can be supplied as a PGM.
    let again = tmp.path().join("from_pgm");
    let truth = tmp.path().join("truth.pgm");
    let r = rjpo(
        &["superres", "--set", &format!("input={}", truth.display()), "--set", "fwhm=2", "--set", "iterations=3", "--set", "burn_in=1"],
        &again,
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}
