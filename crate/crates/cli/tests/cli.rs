use std::path::Path;
use std::process::{Command, Output};

use mlmc_risk_cli::output::{without_timing, ResultFile};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mlmc-risk"));
    c.env("RUST_LOG", "error").env_remove("MLMC_RISK_THREADS");
    c
}

fn run(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("run.conf");
    std::fs::write(&cfg, config).unwrap();
    bin().args(args).arg("--config").arg(&cfg).arg("--out").arg(dir.join("out")).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_header(path: &Path) -> (Vec<String>, String) {
    let text = std::fs::read_to_string(path).unwrap();
    let meta: Vec<String> = text.lines().take_while(|l| l.starts_with('#')).map(str::to_string).collect();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap().to_string();
    (meta, header)
}

#[test]
fn weights_not_summing_to_one_exit_1_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate"], "seed = 1\ncmlmc.w_i = 0.1\ncmlmc.w_b = 0.2\ncmlmc.w_s = 0.6\n", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
    assert!(!dir.path().join("out/result.json").exists());
}

#[test]
fn unknown_key_and_bad_value_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate"], "cmlmc.epsilon = 0.1\n", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1: `cmlmc.epsilon`: unknown key"), "{}", stderr(&o));

    let o = run(&["estimate"], "# eps\n\ncmlmc.eps = -1\n", dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exit_1() {
    let o = bin().args(["estimate", "--config", "/nonexistent/x.conf"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_thread_variable_exit_1() {
    let o = bin().env("MLMC_RISK_THREADS", "many").args(["estimate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unsupported_requests_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compare-estimators"], "model.name = black_scholes\n", dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = run(&["reliability"], "statistic = pdf\n", dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = run(&["reliability"], "study.reference = file\nstudy.reference_file = /nonexistent\n", dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn iteration_cap_exit_2_with_partial_result() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["estimate"], "cmlmc.eps = 0.02\ncmlmc.max_iterations = 1\n", dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let doc = ResultFile::from_json(&std::fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    assert!(!doc.converged);
    assert_eq!(doc.trace.len(), 2);
}

#[test]
fn estimate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.conf");
    std::fs::write(&cfg, "cmlmc.eps = 0.1\nvar.refine_min = 1.8\nvar.refine_max = 1.95\n").unwrap();
    let go = |name: &str, threads: Option<&str>| {
        let mut c = bin();
        c.args(["estimate", "--seed", "42", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join(name));
        if let Some(t) = threads {
            c.env("MLMC_RISK_THREADS", t);
        }
        let o = c.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        std::fs::read_to_string(dir.path().join(name).join("result.json")).unwrap()
    };
    let a = go("a", Some("1"));
    let b = go("b", Some("3"));
    assert_eq!(without_timing(&a).unwrap(), without_timing(&b).unwrap());

    let doc = ResultFile::from_json(&a).unwrap();
    assert_eq!(doc.to_json().unwrap(), a);
    assert_eq!(doc.meta.seed, 42);
    assert!(doc.converged);
    assert!(doc.var_refined.is_some_and(|q| (q - 1.8857).abs() < 0.05));
    assert!((doc.risk.cvar_hat - 2.578204).abs() < 0.1);

    let (meta, header) = csv_header(&dir.path().join("a/curves.csv"));
    assert_eq!(header, "theta,phi,dphi,d2phi,cdf,cdf_clipped,pdf");
    assert!(meta.contains(&format!("# config_hash={}", doc.meta.config_hash)));
    assert!(meta.contains(&"# seed=42".to_string()));
}

#[test]
fn study_commands_write_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "study.repetitions = 2\nstudy.tolerances = 0.3, 0.2\n";
    let o = run(&["reliability"], cfg, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (meta, header) = csv_header(&dir.path().join("out/reliability.csv"));
    assert_eq!(header, "tolerance,rep,stat,true_sq_err,est_mse,cost,status");
    assert!(meta.iter().any(|l| l.starts_with("# reference=2.5782")));
    let rows = std::fs::read_to_string(dir.path().join("out/reliability.csv")).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 5);

    let o = run(&["complexity"], cfg, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (meta, header) = csv_header(&dir.path().join("out/complexity.csv"));
    assert_eq!(header, "tolerance,mean_mlmc_cost,mc_cost_estimate,mc_level,runs");
    assert!(meta.iter().any(|l| l.starts_with("# mlmc_slope=")));
}

#[test]
fn compare_estimators_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "study.n_ref = 50\ncompare.repetitions = 3\ncompare.bias_samples = 100\ncompare.stat_n0 = 50\n\
               compare.lemma_repetitions = 20\ncmlmc.n_fine = 200\n";
    let o = run(&["compare-estimators"], cfg, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let expect = [
        ("interp", "n,m,true_err,estimate"),
        ("bias", "level,samples,rep,m,true_err,apriori,naive,new"),
        ("bias_decay", "level,samples,rep,m,true_err,apriori,naive,new"),
        ("bias_rates", "estimator,m,mean_rate"),
        ("stat", "r,n0,m,true_err,apriori,bootstrap"),
        ("lemma", "lower_factor,upper_factor,sum_v_over_n,sum_v_hat_over_n,stat_sq,ratio"),
    ];
    for (name, head) in expect {
        let (meta, header) = csv_header(&dir.path().join(format!("out/est_compare_{name}.csv")));
        assert_eq!(header, head, "{name}");
        assert!(meta.contains(&format!("# study={name}")));
    }
}
