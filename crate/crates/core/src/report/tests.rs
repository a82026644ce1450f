use std::path::PathBuf;

use super::*;
use crate::run::load_run_set;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> RunSet {
    load_run_set(&root().join(format!("fixtures/runs/{name}.json"))).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(root().join(format!("fixtures/golden/{name}.txt"))).unwrap()
}

fn report(name: &str, min_ratio: f64) -> Report {
    let opts = ReportOptions {
        min_ratio,
        ..ReportOptions::default()
    };
    build_report(&fixture(name), &MachineModel::sandy_bridge(), None, &opts).unwrap()
}

#[test]
fn gnugo_listing_matches_golden() {
    assert_eq!(render_lines(&report("gnugo-tune", DEFAULT_MIN_RATIO).topdown), golden("gnugo-tune"));
}

#[test]
fn stream_listing_matches_golden() {
    assert_eq!(render_lines(&report("stream-tune", 0.0).topdown), golden("stream-tune"));
}

#[test]
fn syscalls_listing_matches_golden() {
    assert_eq!(render_lines(&report("syscalls-tune", 0.0).topdown), golden("syscalls-tune"));
}

#[test]
fn default_threshold_hides_idle_nodes() {
    let text = render_lines(&report("stream-tune", DEFAULT_MIN_RATIO).topdown);
    assert!(!text.contains("L1_Bound"));
    assert!(!text.contains("Bad_Speculation:"));
    assert!(text.contains("DRAM_Bound"));
}

#[test]
fn bottleneck_path_follows_largest_child() {
    assert_eq!(
        report("stream-tune", DEFAULT_MIN_RATIO).bottleneck,
        [
            "Backend_Bound",
            "Backend_Bound.Memory_Bound",
            "Backend_Bound.Memory_Bound.DRAM_Bound"
        ]
    );
    assert_eq!(
        report("gnugo-tune", DEFAULT_MIN_RATIO).bottleneck,
        [
            "Frontend_Bound",
            "Frontend_Bound.Frontend_Latency",
            "Frontend_Bound.Frontend_Latency.ICache_Misses"
        ]
    );
}

#[test]
fn level1_is_always_complete() {
    let r = report("gnugo-tune", DEFAULT_MIN_RATIO);
    let tags: Vec<&str> = r.level1.iter().map(|l| l.tag.as_str()).collect();
    assert_eq!(tags, ["FE", "BAD", "BE", "RET"]);
    let sum: f64 = r.level1.iter().map(|l| l.value.mean).sum();
    assert!((sum - 100.0).abs() < 1e-9);
}

#[test]
fn text_report_has_header_and_throughput() {
    let text = report("gnugo-tune", DEFAULT_MIN_RATIO).render_text();
    assert!(text.starts_with("# gnugo-tune  model sandy-bridge-i7-2640m  regime nomux_group  repeats 5\n"));
    assert!(text.contains(&golden("gnugo-tune")));
    assert!(text.contains("\nIPC0  1.25"));
    assert!(text.contains("bottleneck: Frontend_Bound -> "));
}

#[test]
fn default_setup_reports_hygiene_problems() {
    let r = report("gnugo-dfl", DEFAULT_MIN_RATIO);
    assert!(r.hygiene.iter().any(|w| w.contains("migration")), "{:?}", r.hygiene);
    assert!(report("gnugo-tune", DEFAULT_MIN_RATIO).hygiene.is_empty());
}

#[test]
fn empty_report_exports_in_every_format() {
    let r = Report::default();
    let json = String::from_utf8(export(&r, ExportFormat::Json)).unwrap();
    assert_eq!(Report::from_json(&json).unwrap(), r);
    assert_eq!(String::from_utf8(export(&r, ExportFormat::Csv)).unwrap(), "name,mean,sd,n\n");
    let plot = String::from_utf8(export(&r, ExportFormat::Plotdata)).unwrap();
    assert_eq!(plot.lines().count(), 1);
    assert!(r.render_text().starts_with("# run "));
}

#[test]
fn json_is_a_fixed_point() {
    let r = report("stream-tune", 0.0);
    let once = r.to_json();
    let back = Report::from_json(&once).unwrap();
    assert_eq!(back, r);
    assert_eq!(back.to_json(), once);
}

#[test]
fn report_json_replays_to_the_same_report() {
    let r = report("syscalls-tune", 0.0);
    let rs = RunSet::from_json(&r.to_json()).unwrap();
    let opts = ReportOptions {
        min_ratio: 0.0,
        ..ReportOptions::default()
    };
    let again = build_report(&rs, &MachineModel::sandy_bridge(), None, &opts).unwrap();
    assert_eq!(again, r);
}

#[test]
fn csv_lists_each_name_once() {
    let csv = String::from_utf8(export(&report("gnugo-tune", 1.0), ExportFormat::Csv)).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let unique: BTreeSet<&str> = names.iter().copied().collect();
    assert_eq!(names.len(), unique.len());
    assert!(unique.contains("Frontend_Bound") && unique.contains("IPC0") && unique.contains("task-clock"));
}

#[test]
fn comparing_setups_shows_task_clock_change() {
    let model = MachineModel::sandy_bridge();
    let dfl = comparison_inputs(&fixture("gnugo-dfl"), &model);
    let tune = comparison_inputs(&fixture("gnugo-tune"), &model);
    let c = compare("dfl", &dfl, "tune", &tune, DEFAULT_SIGMA).unwrap();
    let row = c.rows.iter().find(|r| r.name == "task-clock").unwrap();
    let ratio = row.ratio.as_ref().unwrap().mean;
    assert!((ratio - 12.9 / 11.4).abs() < 0.01, "{ratio}");
    assert!(row.significant);
    let text = render_comparison(&c);
    assert!(text.lines().any(|l| l.starts_with("task-clock") && l.ends_with(" *")));
}

#[test]
fn significance_is_symmetric() {
    let model = MachineModel::sandy_bridge();
    let a = comparison_inputs(&fixture("stream-dfl"), &model);
    let b = comparison_inputs(&fixture("stream-tune"), &model);
    let ab = compare("a", &a, "b", &b, DEFAULT_SIGMA).unwrap();
    let ba = compare("b", &b, "a", &a, DEFAULT_SIGMA).unwrap();
    for (x, y) in ab.rows.iter().zip(&ba.rows) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.significant, y.significant, "{}", x.name);
    }
}

#[test]
fn plotdata_stacks_six_configurations() {
    let names = ["gnugo-dfl", "gnugo-tune", "stream-dfl", "stream-tune", "syscalls-dfl", "syscalls-tune"];
    let reports: Vec<Report> = names.iter().map(|n| report(n, DEFAULT_MIN_RATIO)).collect();
    let text = plotdata(&reports);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    for (line, name) in lines[1..].iter().zip(names) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols.len(), 9);
        assert_eq!(cols[0], name);
        let total: f64 = [1, 3, 5, 7].iter().map(|&i| cols[i].parse::<f64>().unwrap()).sum();
        assert!((total - 100.0).abs() < 0.03, "{line}");
    }
}

#[test]
fn disjoint_inputs_do_not_compare() {
    let a = BTreeMap::from([("x".to_string(), Measurement::exact(1.0))]);
    let b = BTreeMap::from([("y".to_string(), Measurement::exact(1.0))]);
    assert!(matches!(compare("a", &a, "b", &b, 2.0), Err(ReportError::DisjointEventSets)));
}
