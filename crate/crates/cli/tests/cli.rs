use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eet")).args(args).output().expect("run eet")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_owned();
    (header, lines.map(|l| l.split(',').map(str::to_owned).collect()).collect())
}

const DENDRIMER: &str = r#"
[network]
builder = "dendrimer"
generations = 2
branching = 3
coupling_meV = 20.0

[state]
preset = "outer_incoherent"

[sweep]
gamma_min_meV = 1e-3
gamma_max_meV = 1e5
points = 25

[analysis]
subspace = true
asymptotes = true
gamma_opt = true
"#;

#[test]
fn dendrimer_sweep_is_u_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DENDRIMER);
    let out = dir.path().join("out");
    let o = eet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let (header, rows) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header, "gamma,mfpt,q_exact,q_approx,divergent_flag");
    assert_eq!(rows.len(), 25);
    let t: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let imin = (0..t.len()).fold(0, |m, k| if t[k] < t[m] { k } else { m });
    assert!(imin > 0 && imin < t.len() - 1);
    assert!(rows.iter().all(|r| r[4] == "0"));
    assert!(rows[0][0].contains('e'));

    let summary = read_json(&out.join("sweep.json"));
    assert_eq!(summary["subspace"]["perp_dim"], 7);
    assert!((summary["units"]["hbar_meV_ps"].as_f64().unwrap() - 0.6582119569).abs() < 1e-12);
    assert!(summary["asymptotes"]["weak_constant"].as_f64().unwrap() > 3.9);
    assert_eq!(summary["optimum"]["no_optimum"], false);
}

#[test]
fn coherent_start_plateaus_without_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &DENDRIMER.replace("outer_incoherent", "gen1_coherent"));
    let out = dir.path().join("out");
    let o = eet(&["optimum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("optimum.json"))["no_optimum"], true);

    let o = eet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let (_, rows) = csv_rows(&out.join("sweep.csv"));
    let t: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((t[1] / t[0] - 1.0).abs() < 1e-3);
    assert!(t[t.len() - 1] > 100.0 * t[0]);
}

#[test]
fn single_site_sweep_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
[network]
builder = "custom"
n_sites = 1
energies = [0.0]
couplings = []
trap_site = 0
trap_rate_meV = 4.0
decay_rate_meV = 0.005

[state]
preset = "site"
site = 0

[sweep]
gamma_min_meV = 1e-2
gamma_max_meV = 1e2
points = 5
"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("out");
    assert!(eet(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let (_, rows) = csv_rows(&out.join("sweep.csv"));
    for r in rows {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.25);
    }
}

#[test]
fn subspace_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (DENDRIMER.to_owned(), 7),
        (
            "[network]\nbuilder = \"dimer\"\ndelta_meV = 0.0\ncoupling_meV = 20.0\n[state]\npreset = \"site\"\nsite = 0\n".to_owned(),
            0,
        ),
        (
            "[network]\nbuilder = \"custom\"\nn_sites = 3\nenergies = [0.0, 0.0, 0.0]\ncouplings = [[0, 1, 1.0], [0, 2, 1.0], [1, 2, 1.0]]\ntrap_site = 0\ntrap_rate_meV = 1.0\ndecay_rate_meV = 0.0\n[state]\npreset = \"site\"\nsite = 1\n".to_owned(),
            1,
        ),
    ];
    for (body, dim) in cases {
        let cfg = write_config(dir.path(), &body);
        let out = dir.path().join("out");
        let o = eet(&["subspace", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(read_json(&out.join("subspace.json"))["perp_dim"], dim);
        assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("perp_dim = {dim}")));
    }
}

const DISORDER: &str = r#"
[network]
builder = "dendrimer"
generations = 2
branching = 3
coupling_meV = 20.0

[state]
preset = "outer_incoherent"

[disorder]
sigma_meV = [0.0, 2.0, 4.0, 8.0]
n_samples = 40
seed = 11
gamma_meV = [1e-10, 1e-9, 1e-8]
"#;

#[test]
fn disorder_grid_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DISORDER);
    let out = dir.path().join("out");
    let o = eet(&["disorder", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = csv_rows(&out.join("disorder.csv"));
    assert_eq!(header, "gamma,sigma,n_samples,mean_t,stderr_t,mean_q,stderr_q,divergent_count");
    assert_eq!(rows.len(), 12);
    // σ = 0 rows reproduce the clean network with zero spread
    for r in rows.iter().filter(|r| r[1].parse::<f64>().unwrap() == 0.0) {
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
    let fit = read_json(&out.join("disorder_fit.json"));
    assert!(fit["fit"]["slope_vs_gamma"]["slope"].is_number());
    assert_eq!(fit["seed"], 11);
}

#[test]
fn dumped_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), DISORDER);
    let o = eet(&["disorder", "--config", &cfg, "--seed", "99", "--dump-config"]);
    assert!(o.status.success());
    let dumped = String::from_utf8(o.stdout).unwrap();
    assert!(dumped.contains("seed = 99"));
    let dumped_path = dir.path().join("dumped.toml");
    fs::write(&dumped_path, &dumped).unwrap();

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = eet(&["disorder", "--config", &cfg, "--seed", "99", "--threads", "1", "--out", a.to_str().unwrap()]);
    let second = eet(&["disorder", "--config", dumped_path.to_str().unwrap(), "--threads", "3", "--out", b.to_str().unwrap()]);
    assert!(first.status.success() && second.status.success());
    assert_eq!(fs::read(a.join("disorder.csv")).unwrap(), fs::read(b.join("disorder.csv")).unwrap());

    let again = eet(&["disorder", "--config", dumped_path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), dumped);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &DENDRIMER.replace("points = 25", "points = \"many\""));
    let o = eet(&["sweep", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("points") && err.contains("line"), "{err}");

    let cfg = write_config(dir.path(), &DENDRIMER.replace("gamma_min_meV = 1e-3", "gamma_min_meV = -1.0"));
    assert_eq!(eet(&["sweep", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(eet(&["sweep"]).status.code(), Some(2));
}

#[test]
fn figure_recipes_parse() {
    let figures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../figures");
    let mut seen = 0;
    for entry in fs::read_dir(figures).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = eet(&["sweep", "--config", path.to_str().unwrap(), "--dump-config"]);
            assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
