use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mldif::data::{ingest, DifDataset, RecodeSpec};
use mldif::report::{parse_cell, parse_markdown_table, stars};
use mldif::sim::{generate, ClusterSize, SimConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mldif"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_schema(schema_file: &str, json: &str) {
    let schema: Value = serde_json::from_str(&fs::read_to_string(repo(&format!("schemas/{schema_file}"))).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let instance: Value = serde_json::from_str(json).expect("valid JSON");
    let msgs: Vec<String> = match compiled.validate(&instance) {
        Ok(()) => Vec::new(),
        Err(errors) => errors.map(|e| format!("{} at {}", e, e.instance_path)).collect(),
    };
    assert!(msgs.is_empty(), "{schema_file}: {msgs:?}");
}

const RAW: &str = "\
resp,dens,score,edu
1,1,5,1
2,1,3,1
2,2,0,1
1,2,10,1
97,1,4,1
2,3,2,1
1,1,8,2
2,2,1,2
2,2,6,2
1,1,12,2
2,1,0,2
99,2,3,2
1,3,9,2
2,1,2,3
1,2,15,3
2,2,4,3
1,1,20,3
2,1,,3
1,2,7,3
2,1,5,3
";

const RECODE: &str = r#"
response_column = "resp"
group_column = "dens"
trait_column = "score"
cluster_column = "edu"
[response_map]
"1" = 1
"2" = 0
"97" = "drop"
"99" = "drop"
[group_map]
"1" = 1
"2" = 0
"3" = "drop"
"#;

fn clustered_fixture(dir: &Path) -> PathBuf {
    let cfg = SimConfig::from_toml_str(
        "n_clusters = 6\ncluster_size = 150\ntau2 = 0.4\nbeta = [-0.5, 0.9, -0.4, 0.0]\nseed = 99\nreplications = 1\n",
    )
    .unwrap();
    let ds = generate(&cfg, 0).unwrap();
    let path = dir.join("sim.csv");
    ds.write_csv(fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn help_and_usage_errors() {
    assert!(run(&["--help"]).status.success());
    let o = run(&["dif", "nope", "--input", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown DIF method"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["compare", "--input", "x.csv", "--format", "xml"]).status.code(), Some(1));
    assert_eq!(run(&["compare", "--input", "x.csv", "--method", "agq:0"]).status.code(), Some(1));
}

#[test]
fn prepare_matches_hand_counts_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let cfg = dir.path().join("recode.toml");
    let out = dir.path().join("prepared.csv");
    fs::write(&raw, RAW).unwrap();
    fs::write(&cfg, RECODE).unwrap();
    let o = run(&[
        "prepare", "--input", raw.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--output", out.to_str().unwrap(), "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json = stdout(&o);
    assert_schema("prepare_summary.schema.json", &json);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["records"], 15);
    assert_eq!(v["clusters"], 3);
    assert_eq!(v["group_counts"], serde_json::json!([7, 8]));
    assert_eq!(v["response_counts"], serde_json::json!([8, 7]));
    assert_eq!(v["provenance"]["rows_read"], 20);
    assert_eq!(v["provenance"]["dropped"]["response"], 2);
    assert_eq!(v["provenance"]["dropped"]["group"], 2);
    assert_eq!(v["provenance"]["dropped"]["missing:score"], 1);
    let rows = &v["cluster_table"]["rows"];
    let counts: Vec<[u64; 4]> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| ["reference", "focal", "no", "yes"].map(|k| r[k].as_u64().unwrap()))
        .collect();
    assert_eq!(counts, vec![[2, 2, 2, 2], [2, 3, 3, 2], [3, 3, 3, 3]]);

    let direct = ingest(&raw, &RecodeSpec::from_toml_str(RECODE).unwrap()).unwrap();
    let back = DifDataset::read_csv(&out).unwrap();
    assert_eq!(direct.records(), back.records());
    assert_eq!(direct.cluster_labels(), back.cluster_labels());

    let md = run(&[
        "prepare", "--input", raw.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--output", out.to_str().unwrap(),
    ]);
    let table = parse_markdown_table(&stdout(&md));
    assert_eq!(table.last().unwrap(), &["Total", "7", "8", "8", "7", "15"]);
}

#[test]
fn prepare_reports_empty_result() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let cfg = dir.path().join("recode.toml");
    fs::write(&raw, "resp,dens,score,edu\n97,1,1,1\n99,2,2,1\n97,1,0,2\n").unwrap();
    fs::write(&cfg, RECODE).unwrap();
    let o = run(&[
        "prepare", "--input", raw.to_str().unwrap(), "--config", cfg.to_str().unwrap(),
        "--output", dir.path().join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("response"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_a_config_error() {
    let o = run(&["prepare", "--input", "nope.csv", "--config", "nope.toml", "--output", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_is_deterministic_and_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let data = clustered_fixture(dir.path());
    let args = ["compare", "--input", data.to_str().unwrap(), "--format", "json"];
    let a = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&run(&args)));
    let json = stdout(&a);
    assert_schema("model_comparison.schema.json", &json);
    let v: Value = serde_json::from_str(&json).unwrap();
    let models = v["models"].as_array().unwrap();
    for m in models {
        assert_eq!(m["n"], 900);
        for c in m["coefficients"].as_array().unwrap() {
            assert_eq!(c["stars"].as_str().unwrap(), stars(c["p"].as_f64().unwrap()));
        }
    }
    assert!(models[3]["tau2"].is_null() && models[3]["icc"].is_null() && models[3]["r2_conditional"].is_null());

    let md = stdout(&run(&["compare", "--input", data.to_str().unwrap()]));
    let table = parse_markdown_table(&md);
    assert_eq!(table[0][1..], ["Model 0", "Model 1", "Model 2", "Model 3"]);
    let beta2 = table.iter().position(|r| r[0] == "β2").unwrap();
    let m1 = &models[1]["coefficients"][2];
    assert_eq!(m1["term"], "group");
    let shown = parse_cell(&table[beta2][2]).unwrap();
    assert!((shown - m1["estimate"].as_f64().unwrap()).abs() <= 0.005 + 1e-12);
    assert!(table[beta2][2].ends_with(m1["stars"].as_str().unwrap()));
    let se = parse_cell(&table[beta2 + 1][2]).unwrap();
    assert!((se - m1["std_error"].as_f64().unwrap()).abs() <= 0.005 + 1e-12);
    let aic = table.iter().find(|r| r[0] == "AIC").unwrap();
    assert!((parse_cell(&aic[2]).unwrap() - models[1]["aic"].as_f64().unwrap()).abs() <= 0.5 + 1e-9);

    let csv = stdout(&run(&["compare", "--input", data.to_str().unwrap(), "--format", "csv"]));
    assert!(csv.lines().next().unwrap().starts_with("model,quantity"));
}

#[test]
fn dif_methods_render_in_every_format() {
    let dir = tempfile::tempdir().unwrap();
    let data = clustered_fixture(dir.path());
    let d = data.to_str().unwrap();
    for method in ["mh", "lr", "mlr"] {
        let o = run(&["dif", method, "--input", d, "--format", "json"]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        assert_schema("dif_decision.schema.json", &stdout(&o));
        let md = run(&["dif", method, "--input", d]);
        assert!(md.status.success());
        assert!(!parse_markdown_table(&stdout(&md)).is_empty());
        let csv = run(&["dif", method, "--input", d, "--format", "csv"]);
        assert!(stdout(&csv).starts_with("method,statistic"));
    }
    let o = run(&["dif", "mlr", "--input", d, "--interaction", "--method", "agq:5", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_schema("dif_decision.schema.json", &stdout(&o));
    let o = run(&["dif", "lr", "--input", d, "--test", "lr", "--rule", "sequential", "--format", "json"]);
    assert_schema("dif_decision.schema.json", &stdout(&o));
}

#[test]
fn mlr_on_single_cluster_is_a_precondition_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    let mut text = String::from("response,group,trait,cluster\n");
    for i in 0..60 {
        text.push_str(&format!("{},{},{},A\n", (i * 7 % 5 < 2) as u8, i % 2, i % 6));
    }
    fs::write(&path, text).unwrap();
    let o = run(&["dif", "mlr", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["compare", "--input", path.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["models"][0]["error"].as_str().unwrap().contains("clusters"));
    assert!(v["models"][3]["error"].is_null());
}

#[test]
fn lord_on_verbal_full_set() {
    let verbal = repo("crates/core/data/verbal.csv");
    let header = fs::read_to_string(&verbal).unwrap();
    let items: Vec<&str> = header.lines().next().unwrap().split(',').take(24).collect();
    let items = items.join(",");
    let base = ["dif", "lord", "--input", verbal.to_str().unwrap(), "--group-column", "Gender", "--item", "S1wantCurse", "--items", &items];
    let o = run(&base);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = parse_markdown_table(&stdout(&o));
    assert_eq!(table[0], ["Item set", "χ²Lord", "p-value", "Verdict"]);
    let chi = parse_cell(&table[1][1]).unwrap();
    assert!((chi - 1.3724).abs() < 0.137);
    assert_eq!(table[1][3], "no_dif");
    let mut json_args = base.to_vec();
    json_args.extend(["--format", "json"]);
    assert_schema("dif_decision.schema.json", &stdout(&run(&json_args)));
    let o = run(&["dif", "lord", "--input", verbal.to_str().unwrap(), "--group-column", "Gender", "--items", &items]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_single_replication() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("study");
    let cfg = repo("configs/sim_single.toml");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--report-stem", stem.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_schema("sim_report.schema.json", &stdout(&o));
    let written = fs::read_to_string(stem.with_extension("json")).unwrap();
    assert_eq!(written, stdout(&o).trim_end());
    let v: Value = serde_json::from_str(&written).unwrap();
    for m in v["methods"].as_array().unwrap() {
        assert_eq!(m["mc_se"], 0.0);
    }
    let md = fs::read_to_string(stem.with_extension("md")).unwrap();
    let table = parse_markdown_table(&md);
    assert_eq!(table.len(), 4);
    let again = run(&["simulate", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn malformed_sim_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "n_clusters = 2\ncluster_size = 10\ntau2 = \"lots\"\n").unwrap();
    let o = run(&["simulate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("tau2") && err.contains("line 3"), "{err}");
}

#[test]
fn shipped_configs_parse() {
    for f in ["sim_null.toml", "sim_uniform_dif.toml", "sim_single.toml"] {
        SimConfig::from_file(repo(&format!("configs/{f}"))).unwrap();
    }
    let spec = RecodeSpec::from_file(repo("configs/nsduh_2022.toml")).unwrap();
    assert_eq!(spec.response_column, "ADDPREV");
    let c = SimConfig::from_file(repo("configs/sim_null.toml")).unwrap();
    assert!(matches!(c.cluster_size, ClusterSize::Uniform(500)));
}
