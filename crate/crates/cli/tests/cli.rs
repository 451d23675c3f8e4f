use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcinv_core::gp::GpModelFile;
use dcinv_core::io::read_table;
use dcinv_core::maps::hall_petch_eval;
use tempfile::TempDir;

fn dcinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcinv")).args(args).output().expect("run dcinv")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new() -> Self {
        Case { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, body: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn run(&self, cmd: &str, config: &Path, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", config.to_str().unwrap()];
        args.extend_from_slice(extra);
        dcinv(&args)
    }

    fn json(&self, name: &str) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }
}

const HALL_PETCH_NORMAL: &str = r#"
schema_version = 1
seed = 1

[map]
kind = "hall_petch"

[initial_density]
kind = "uniform"
lower = [0.25]
upper = [2.75]

[target_density]
kind = "normal"
mean = [540.0]
sd = [10.0]

[inversion]
p_samples = 100000

[outputs]
directory = "out"
"#;

fn generate_config(n_sve: usize, s0: f64) -> String {
    format!(
        r#"
schema_version = 1
seed = 5

[map]
kind = "hall_petch"
noise = "grain"
s0 = {s0:?}

[generate]
grid_start = 0.25
grid_stop = 2.75
grid_step = 0.25
n_sve = {n_sve}

[outputs]
directory = "out"
"#
    )
}

fn fit_config(noise: Option<&str>) -> String {
    let noise = noise.map(|c| format!("noise_variance = \"{c}\"\n")).unwrap_or_default();
    format!(
        r#"
schema_version = 1
seed = 2

[fit]
dataset_file = "data.csv"
features = ["mu_d"]
target = "sigma_y"
{noise}
[outputs]
directory = "out"
"#
    )
}

#[test]
fn version_flag() {
    let o = dcinv(&["--version"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn generate_writes_grid_and_realizations() {
    let c = Case::new();
    let cfg = c.write("gen.toml", &generate_config(25, 0.1616));
    let o = c.run("generate", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let data = read_table(&c.path("out/dataset.csv")).unwrap();
    assert_eq!(data.data.rows(), 11);
    assert_eq!(data.headers, ["mu_d", "sigma_y", "variance", "noise_variance"]);
    let real = read_table(&c.path("out/realizations.csv")).unwrap();
    assert_eq!(real.data.rows(), 275);
    // scatter grows with mean grain size
    let var = data.column("variance").unwrap();
    assert!(var[10] > var[0]);
    assert!(!c.path("out/.dcinv.lock").exists());

    let first = fs::read(c.path("out/dataset.csv")).unwrap();
    let first_real = fs::read(c.path("out/realizations.csv")).unwrap();
    assert_eq!(code(&c.run("generate", &cfg, &[])), 0);
    assert_eq!(fs::read(c.path("out/dataset.csv")).unwrap(), first);
    assert_eq!(fs::read(c.path("out/realizations.csv")).unwrap(), first_real);

    assert_eq!(code(&c.run("generate", &cfg, &["--seed", "6"])), 0);
    assert_ne!(fs::read(c.path("out/dataset.csv")).unwrap(), first);
}

#[test]
fn generate_without_noise_is_exact() {
    let c = Case::new();
    let cfg = c.write("gen.toml", &generate_config(1, 0.0));
    assert_eq!(code(&c.run("generate", &cfg, &[])), 0);
    let data = read_table(&c.path("out/dataset.csv")).unwrap();
    for row in data.data.iter_rows() {
        assert_eq!(row[1], hall_petch_eval(row[0]));
        assert_eq!(row[2], 0.0);
    }
}

fn write_dataset(c: &Case, noisy: bool) {
    let mut s = String::from("mu_d,sigma_y,noise_variance\n");
    for i in 0..11 {
        let m = 0.25 + 0.25 * i as f64;
        let nv = if noisy { (0.1616 * (1.5 * m).exp()).powi(2) / 25.0 } else { 0.0 };
        s.push_str(&format!("{m},{},{nv}\n", hall_petch_eval(m)));
    }
    c.write("data.csv", &s);
}

fn load_model(c: &Case) -> dcinv_core::gp::GpModel<f64> {
    GpModelFile::from_json(&fs::read_to_string(c.path("out/model.json")).unwrap()).unwrap().to_model().unwrap()
}

#[test]
fn fit_interpolates_noiseless_data() {
    let c = Case::new();
    write_dataset(&c, false);
    let cfg = c.write("fit.toml", &fit_config(None));
    let o = c.run("fit", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("log marginal likelihood"));
    let model = load_model(&c);
    for i in 0..11 {
        let m = 0.25 + 0.25 * i as f64;
        assert!((model.predict(&[m]).unwrap().0 - hall_petch_eval(m)).abs() < 1e-3);
    }
    let bytes = fs::read(c.path("out/model.json")).unwrap();
    assert_eq!(code(&c.run("fit", &cfg, &[])), 0);
    assert_eq!(fs::read(c.path("out/model.json")).unwrap(), bytes);
}

#[test]
fn fit_with_variance_column_is_heteroscedastic() {
    let c = Case::new();
    write_dataset(&c, true);
    let cfg = c.write("fit.toml", &fit_config(Some("noise_variance")));
    assert_eq!(code(&c.run("fit", &cfg, &[])), 0);
    let model = load_model(&c);
    let (_, v_small) = model.predict(&[0.25]).unwrap();
    let (_, v_large) = model.predict(&[2.75]).unwrap();
    assert!(v_large > v_small, "{v_large} vs {v_small}");
}

#[test]
fn fit_failure_exits_3() {
    let c = Case::new();
    c.write("data.csv", "mu_d,sigma_y\n1.0,540.0\n");
    let cfg = c.write("fit.toml", &fit_config(None));
    let o = c.run("fit", &cfg, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!c.path("out/model.json").exists());

    c.write("data.csv", "mu_d,sigma_y\n1.0,540.0\n1.0,541.0\n2.0,530.0\n");
    assert_eq!(code(&c.run("fit", &cfg, &[])), 3);
}

#[test]
fn invert_and_diagnose_round_trip() {
    let c = Case::new();
    let cfg = c.write("inv.toml", HALL_PETCH_NORMAL);
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = c.json("out/diagnostics.json");
    let integral = d["integral"].as_f64().unwrap();
    assert!((integral - 0.995).abs() <= 0.02, "{integral}");
    for key in ["integral", "kl", "m_bound", "acceptance_rate", "p_samples", "n_accepted", "predictability_ok", "warnings"] {
        assert!(d.get(key).is_some(), "missing {key}");
    }
    for f in ["accepted.csv", "ensemble.csv", "hist_mu_d.csv", "kde_mu_d.csv", "hist_sigma_y.csv", "kde_sigma_y.csv"] {
        assert!(c.path("out").join(f).is_file(), "{f}");
    }
    let accepted = read_table(&c.path("out/accepted.csv")).unwrap();
    assert_eq!(accepted.headers, ["mu_d", "sigma_y", "ratio"]);
    assert_eq!(accepted.data.rows() as u64, d["n_accepted"].as_u64().unwrap());
    let kde = read_table(&c.path("out/kde_sigma_y.csv")).unwrap();
    assert_eq!(kde.data.rows(), 512);
    assert_eq!(kde.headers, ["x", "predicted_kde", "updated_kde", "target", "predicted"]);
    assert_eq!(read_table(&c.path("out/hist_mu_d.csv")).unwrap().data.rows(), 100);

    let o = c.run("diagnose", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let original = fs::read_to_string(c.path("out/diagnostics.json")).unwrap();
    assert_eq!(fs::read_to_string(c.path("out/diagnose.json")).unwrap(), original);
    assert_eq!(String::from_utf8_lossy(&o.stdout), original);
    let leftovers: Vec<_> = fs::read_dir(c.path("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".tmp") || n.ends_with(".lock"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn stochastic_map_lowers_kl() {
    let c = Case::new();
    let det = c.write("det.toml", HALL_PETCH_NORMAL);
    let sto = c.write(
        "sto.toml",
        &HALL_PETCH_NORMAL
            .replace("kind = \"hall_petch\"", "kind = \"hall_petch\"\nnoise = \"grain\"")
            .replace("p_samples = 100000", "p_samples = 100000\nmode = \"stochastic\""),
    );
    assert_eq!(code(&c.run("invert", &det, &["--out-dir", c.path("det").to_str().unwrap()])), 0);
    assert_eq!(code(&c.run("invert", &sto, &["--out-dir", c.path("sto").to_str().unwrap()])), 0);
    let kl_det = c.json("det/diagnostics.json")["kl"].as_f64().unwrap();
    let kl_sto = c.json("sto/diagnostics.json")["kl"].as_f64().unwrap();
    assert!(kl_sto < kl_det, "{kl_sto} vs {kl_det}");
    assert!((kl_sto - 0.557).abs() <= 0.05, "{kl_sto}");
}

#[test]
fn aspect_ratio_uniform_target() {
    let c = Case::new();
    let cfg = c.write(
        "ar.toml",
        r#"
schema_version = 1
seed = 4

[map]
kind = "aspect_ratio"

[initial_density]
kind = "ordered_uniform"
lower = [0.25]
upper = [1.0]

[target_density]
kind = "uniform"
lower = [82.5]
upper = [83.0]

[inversion]
p_samples = 200000

[outputs]
directory = "out"
"#,
    );
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let integral = c.json("out/diagnostics.json")["integral"].as_f64().unwrap();
    assert!((0.95..=1.02).contains(&integral), "{integral}");
    let acc = read_table(&c.path("out/accepted.csv")).unwrap();
    assert_eq!(acc.headers, ["b_over_a", "c_over_a", "sigma_y", "ratio"]);
    assert!(acc.data.iter_rows().all(|r| r[1] <= r[0]));
}

#[test]
fn serial_and_parallel_outputs_match() {
    let c = Case::new();
    let base = HALL_PETCH_NORMAL.replace("p_samples = 100000", "p_samples = 20000");
    let par = c.write("par.toml", &base);
    let ser = c.write("ser.toml", &base.replace("p_samples = 20000", "p_samples = 20000\nparallel = false"));
    assert_eq!(code(&c.run("invert", &par, &["--out-dir", c.path("a").to_str().unwrap()])), 0);
    assert_eq!(code(&c.run("invert", &ser, &["--out-dir", c.path("b").to_str().unwrap()])), 0);
    for f in ["ensemble.csv", "diagnostics.json", "kde_sigma_y.csv"] {
        assert_eq!(fs::read(c.path("a").join(f)).unwrap(), fs::read(c.path("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn diagnose_hand_built_ensembles() {
    let c = Case::new();
    let cfg = c.write("d.toml", "schema_version = 1\n");
    c.write("ones.csv", "batch,ratio,accepted\n0,1,1\n0,1,1\n0,1,0\n");
    let o = c.run("diagnose", &cfg, &["--ensemble", c.path("ones.csv").to_str().unwrap(), "--out-dir", c.path("o").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = c.json("o/diagnose.json");
    assert_eq!(d["integral"].as_f64().unwrap(), 1.0);
    assert_eq!(d["kl"].as_f64().unwrap(), 0.0);

    c.write("pair.csv", "batch,ratio,accepted\n0,0.5,0\n0,1.5,1\n");
    let o = c.run("diagnose", &cfg, &["--ensemble", c.path("pair.csv").to_str().unwrap(), "--out-dir", c.path("o").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let kl = c.json("o/diagnose.json")["kl"].as_f64().unwrap();
    assert!((kl - 0.13081).abs() < 1e-5, "{kl}");

    c.write("bad.csv", "batch,accepted\n0,1\n");
    let o = c.run("diagnose", &cfg, &["--ensemble", c.path("bad.csv").to_str().unwrap(), "--out-dir", c.path("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("ratio"));
}

#[test]
fn config_errors_exit_2_with_line() {
    let c = Case::new();
    let cfg = c.write("bad.toml", &HALL_PETCH_NORMAL.replace("sd = [10.0]", "sd = [10.0]\nwidth = 3"));
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.toml:17:"), "{}", stderr(&o));

    let cfg = c.write("dim.toml", &HALL_PETCH_NORMAL.replace("mean = [540.0]\nsd = [10.0]", "mean = [540.0, 1.0]\nsd = [10.0, 1.0]"));
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let cfg = c.write("p.toml", &HALL_PETCH_NORMAL.replace("p_samples = 100000", "p_samples = 50"));
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("p.toml:19:"), "{}", stderr(&o));

    let o = dcinv(&["invert", "--config", c.path("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_config_runs_nothing() {
    let c = Case::new();
    let cfg = c.write("inv.toml", HALL_PETCH_NORMAL);
    let o = c.run("invert", &cfg, &["--validate-config"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!c.path("out").exists());

    let cfg = c.write(
        "gp.toml",
        &HALL_PETCH_NORMAL.replace("kind = \"hall_petch\"", "kind = \"gp_model\"\nmodel_file = \"nope.json\""),
    );
    let o = c.run("invert", &cfg, &["--validate-config"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("file not found"), "{}", stderr(&o));
}

#[test]
fn unreachable_target_exits_4_without_outputs() {
    let c = Case::new();
    let cfg = c.write("inv.toml", &HALL_PETCH_NORMAL.replace("mean = [540.0]\nsd = [10.0]", "mean = [800.0]\nsd = [1.0]"));
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("unreachable"));
    assert!(!c.path("out/accepted.csv").exists());
    assert!(!c.path("out/diagnostics.json").exists());
}

#[test]
fn constant_map_exits_5() {
    let c = Case::new();
    let cfg = c.write(
        "inv.toml",
        &HALL_PETCH_NORMAL.replace("kind = \"hall_petch\"", "kind = \"hall_petch\"\nk_hp = 0.0"),
    );
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn locked_output_directory_is_refused() {
    let c = Case::new();
    let cfg = c.write("inv.toml", &HALL_PETCH_NORMAL.replace("p_samples = 100000", "p_samples = 1000"));
    fs::create_dir_all(c.path("out")).unwrap();
    fs::write(c.path("out/.dcinv.lock"), "").unwrap();
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("in use"));
}

#[test]
fn surrogate_pipeline() {
    let c = Case::new();
    let cfg = c.write(
        "sur.toml",
        r#"
schema_version = 1
seed = 7

[map]
kind = "gp_model"
model_file = "out/model.json"

[generate]
grid_start = 0.25
grid_stop = 2.75
grid_step = 0.25

[generate.map]
kind = "hall_petch"

[fit]
dataset_file = "out/dataset.csv"
features = ["mu_d"]
target = "sigma_y"
noise_variance = "noise_variance"

[initial_density]
kind = "uniform"
lower = [0.25]
upper = [2.75]

[target_density]
kind = "normal"
mean = [540.0]
sd = [10.0]

[inversion]
p_samples = 20000

[outputs]
directory = "out"
"#,
    );
    for cmd in ["generate", "fit", "invert"] {
        let o = c.run(cmd, &cfg, &[]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    let integral = c.json("out/diagnostics.json")["integral"].as_f64().unwrap();
    assert!((integral - 1.0).abs() < 0.05, "{integral}");
}

#[test]
fn dataset_map_fits_then_inverts() {
    let c = Case::new();
    write_dataset(&c, true);
    let cfg = c.write(
        "ds.toml",
        &HALL_PETCH_NORMAL
            .replace(
                "kind = \"hall_petch\"",
                "kind = \"dataset\"\ndataset_file = \"data.csv\"\nfeatures = [\"mu_d\"]\ntarget = \"sigma_y\"\nnoise_variance = \"noise_variance\"",
            )
            .replace("p_samples = 100000", "p_samples = 20000"),
    );
    let o = c.run("invert", &cfg, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bad = c.write("bad.toml", &fs::read_to_string(&cfg).unwrap().replace("target = \"sigma_y\"", "target = \"nope\""));
    assert_eq!(code(&c.run("invert", &bad, &["--validate-config"])), 2);
}
