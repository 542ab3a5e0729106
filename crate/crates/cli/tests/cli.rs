use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use sketchd::synth::{generate, CORRELATED};
use sketchd::workload::group_boundaries;
use sketchd::{
    compare, run_workload, CliError, MixedWorkload, Mode, Ratio, Record, RunReport, Runner, SynthConfig,
    UpdateSpec, Workload,
};
use sketchd_core::fixtures::{new_sale, price_partition, q_top, sales_rows, sales_schema};
use sketchd_core::{FragmentId, Partition, Sketch, Value};
use sketchd_manager::ManagerConfig;

fn row(t: &sketchd_core::Tuple) -> Vec<Value> {
    t.values().to_vec()
}

fn running_example() -> Workload {
    let records = vec![
        Record::CreateTable {
            name: "sales".into(),
            attributes: sales_schema().attributes.clone(),
        },
        Record::Update(UpdateSpec {
            table: "sales".into(),
            insert: sales_rows().iter().map(row).collect(),
            delete: Vec::new(),
            generate: None,
        }),
        Record::DeclarePartition(Partition::Ranges(price_partition()).to_spec()),
        Record::RegisterQuery {
            name: "q_top".into(),
            plan: q_top(),
        },
        Record::Query { name: "q_top".into() },
        Record::Update(UpdateSpec {
            table: "sales".into(),
            insert: vec![row(&new_sale())],
            delete: Vec::new(),
            generate: None,
        }),
        Record::Query { name: "q_top".into() },
    ];
    let w = Workload {
        records: records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect(),
        base_dir: Default::default(),
    };
    Workload::parse(&w.to_jsonl(), "").unwrap()
}

fn checksums(r: &RunReport) -> Vec<Option<String>> {
    r.rows.iter().map(|row| row.checksum.clone()).collect()
}

#[test]
fn running_example_agrees_across_modes() {
    let w = running_example();
    let reports: Vec<RunReport> = [Mode::Ns, Mode::Fm, Mode::Imp]
        .into_iter()
        .map(|m| run_workload(&w, m, ManagerConfig::default()).unwrap())
        .collect();
    assert_eq!(checksums(&reports[0]), checksums(&reports[1]));
    assert_eq!(checksums(&reports[0]), checksums(&reports[2]));
    compare(&reports).unwrap();

    let mut runner = Runner::new(Mode::Imp, ManagerConfig::default()).unwrap();
    runner.run(&w).unwrap();
    let last = runner.last_query().unwrap();
    assert_eq!(last.sketch, Some(Sketch::from_ids(4, [1, 2, 3].map(FragmentId))));
    assert_eq!(last.result.len(), 2);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "# comment\n\n{\"op\":\"create_table\",\"name\":\"t\",\"attributes\":[{\"name\":\"a\",\"kind\":\"i64\"}]}\n{\"op\":\"bogus\"}\n";
    match Workload::parse(text, "") {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let text = "{\"op\":\"query\",\"name\":\"missing\"}\n";
    assert!(matches!(Workload::parse(text, ""), Err(CliError::Parse { line: 1, .. })));
}

#[test]
fn workload_without_updates_captures_once() {
    let mut w = running_example();
    w.records.retain(|(_, r)| !matches!(r, Record::Update(u) if u.insert.len() == 1));
    w.records.push((99, Record::Query { name: "q_top".into() }));
    let mut runner = Runner::new(Mode::Imp, ManagerConfig::default()).unwrap();
    let report = runner.run(&w).unwrap();
    let stats = runner.manager().unwrap().stats();
    assert_eq!(stats.captures, 1);
    assert_eq!(stats.maintenances, 0);
    assert!(report.rows.iter().filter(|r| r.kind == "query").all(|r| r.delta_size == 0));
}

fn mixed(dir: &Path, ratio: &str) -> MixedWorkload {
    MixedWorkload {
        table: "t".into(),
        csv_path: dir.join("t.csv"),
        rows: 2000,
        groups: 50,
        sigma: 1.0,
        fragments: 8,
        ops: 10,
        ratio: ratio.parse::<Ratio>().unwrap(),
        delta_rows: 20,
        delete_rows: 5,
        seed: 3,
    }
}

#[test]
fn generated_workloads_follow_the_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let w = mixed(dir.path(), "1U1Q").build();
    let kinds: Vec<&str> = w.records.iter().skip(3).map(|(_, r)| r.kind()).collect();
    assert_eq!(kinds, ["update", "query"].repeat(5));
    let w = mixed(dir.path(), "3U1Q").build();
    let kinds: Vec<&str> = w.records.iter().skip(3).map(|(_, r)| r.kind()).collect();
    assert_eq!(&kinds[..4], ["update", "update", "update", "query"]);
}

#[test]
fn generated_workload_runs_identically_in_all_modes() {
    let dir = tempfile::tempdir().unwrap();
    let m = mixed(dir.path(), "1U1Q");
    let cfg = SynthConfig {
        rows: m.rows,
        groups: m.groups,
        seed: m.seed,
        sigma: m.sigma,
    };
    sketchd::synth::write_csv(cfg, std::fs::File::create(&m.csv_path).unwrap()).unwrap();
    let w = Workload::parse(&m.build().to_jsonl(), dir.path()).unwrap();
    let reports: Vec<RunReport> = [Mode::Ns, Mode::Fm, Mode::Imp]
        .into_iter()
        .map(|mode| run_workload(&w, mode, ManagerConfig::default()).unwrap())
        .collect();
    let summary = compare(&reports).unwrap();
    assert_eq!(summary.base, Mode::Fm);
    let again = run_workload(&w, Mode::Imp, ManagerConfig::default()).unwrap();
    assert_eq!(checksums(&again), checksums(&reports[2]));
}

#[test]
fn generator_shape() {
    let cfg = SynthConfig {
        rows: 1000,
        groups: 50,
        seed: 9,
        sigma: 0.0,
    };
    let rel = generate("t", cfg).unwrap();
    assert_eq!(rel.len(), 1000);
    let groups: BTreeSet<i64> = rel.rows().iter().map(|(t, _)| t.get(1).as_i64().unwrap()).collect();
    assert_eq!(groups, (0..50).collect());
    for (t, _) in rel.rows() {
        let a = t.get(1).as_i64().unwrap();
        for (i, _) in CORRELATED.iter().enumerate() {
            assert_eq!(t.get(2 + i).as_i64().unwrap(), (i as i64 + 1) * a);
        }
    }
    assert_eq!(generate("t", cfg).unwrap(), rel);
}

#[test]
fn boundaries_cover_every_group() {
    let b = group_boundaries(50, 8);
    assert_eq!(b.first(), Some(&Value::I64(0)));
    assert_eq!(b.last(), Some(&Value::I64(49)));
}

fn sketchd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sketchd")).args(args).output().unwrap()
}

#[test]
fn binary_gen_run_compare() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let gen = |csv: &str| {
        sketchd(&[
            "gen", "--rows", "500", "--groups", "20", "--seed", "4", "--out", csv, "--workload", &p("w.jsonl"),
            "--ops", "6", "--delta-rows", "10", "--fragments", "4",
        ])
    };
    assert!(gen(&p("t.csv")).status.success());
    assert!(gen(&p("t2.csv")).status.success());
    assert_eq!(std::fs::read(p("t.csv")).unwrap(), std::fs::read(p("t2.csv")).unwrap());
    assert!(gen(&p("t.csv")).status.success());

    for mode in ["fm", "imp"] {
        let out = sketchd(&["run", "--workload", &p("w.jsonl"), "--mode", mode, "--out", &p(&format!("{mode}.csv"))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = sketchd(&["compare", &p("fm.csv"), &p("fm.csv"), "--out", &p("same.csv")]);
    assert!(out.status.success());
    let summary = std::fs::read_to_string(p("same.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.ends_with(",1.0")), "{summary}");
    assert!(sketchd(&["compare", &p("fm.csv"), &p("imp.csv")]).status.success());

    let mut report = RunReport::from_path(Path::new(&p("imp.csv"))).unwrap();
    let q = report.rows.iter_mut().find(|r| r.checksum.is_some()).unwrap();
    q.checksum = Some("0".into());
    report.write_csv(std::fs::File::create(p("bad.csv")).unwrap()).unwrap();
    let out = sketchd(&["compare", &p("fm.csv"), &p("bad.csv")]);
    assert!(!out.status.success());
}
