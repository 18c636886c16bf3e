use std::path::Path;
use std::process::Command;

use pwe_core::objectives::EavesTarget;
use pwe_core::scenario_io::*;

const SMALL: &str = "\
[floorplan]
room 6 6 3
coat all

[params]
seed = 7

[users]
user 0 pos=1.5,1.5,1 alpha=120 phi=90 theta=0
user 1 pos=4.5,4.5,1 alpha=120 phi=90 theta=0
user 2 pos=4.5,1.5,1 alpha=60 phi=90 theta=0

[pairs]
0 -> 1 : MaxPower, EavesMit(2)
2 -> x : Block
";

fn scenarios() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios"))
}

fn parse_err_line(text: &str) -> usize {
    match parse_scenario(text, None) {
        Err(ScenarioError::Parse { line, .. }) => line,
        Err(ScenarioError::Validation { line: Some(line), .. }) => line,
        other => panic!("expected a located error, got {:?}", other),
    }
}

#[test]
fn parses_small_scenario() {
    let sc = parse_scenario(SMALL, None).unwrap();
    assert_eq!(sc.users.len(), 3);
    assert_eq!(sc.pairs.len(), 2);
    assert_eq!(sc.pairs[0].objective.eaves, Some(EavesTarget::Users(vec![2])));
    assert!(sc.pairs[1].objective.block);
    assert_eq!(sc.params.seed, 7);
    assert_eq!(sc.coated, [true; 6]);
}

#[test]
fn errors_carry_line_numbers() {
    assert_eq!(parse_err_line(&SMALL.replace("room 6 6 3", "room 6 six 3")), 2);
    assert_eq!(parse_err_line(&SMALL.replace("MaxPower, EavesMit(2)", "MaxPower, MaxSIR")), 14);
    assert_eq!(parse_err_line(&SMALL.replace("user 2 pos=4.5,1.5,1", "user 2 pos=9,1.5,1")), 11);
    assert_eq!(parse_err_line(&SMALL.replace("user 2 ", "user 5 ")), 11);
    assert_eq!(parse_err_line(&SMALL.replace("seed = 7", "bogus = 1")), 6);
    assert_eq!(parse_err_line(&SMALL.replace("0 -> 1", "0 -> 8")), 14);
}

#[test]
fn untileable_room_is_a_validation_error() {
    let e = parse_scenario(&SMALL.replace("room 6 6 3", "room 6.5 6 3"), None).unwrap_err();
    assert!(e.is_validation(), "{e}");
}

#[test]
fn canonical_text_round_trips() {
    for name in ["showcase.scn", "doppler.scn", "stress_l1.scn", "stress_serial.scn"] {
        let sc = load_scenario(&scenarios().join(name)).unwrap();
        let text = sc.to_text();
        let again = parse_scenario(&text, None).unwrap();
        assert_eq!(again, sc, "{name}");
        assert_eq!(again.to_text(), text);
    }
}

#[test]
fn shipped_scenarios_validate() {
    for e in std::fs::read_dir(scenarios()).unwrap() {
        let p = e.unwrap().path();
        if p.extension().map_or(false, |x| x == "scn") {
            let sc = load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            sc.graph().unwrap();
        }
    }
}

#[test]
fn run_is_deterministic_and_consistent() {
    let sc = parse_scenario(SMALL, None).unwrap();
    let a = run(&sc, Mode::Pwe, &RunOptions::default()).unwrap();
    let b = run(&sc, Mode::Pwe, &RunOptions { workers: Some(2), ..Default::default() }).unwrap();
    assert_eq!(metrics_text(&a), metrics_text(&b));
    assert_eq!(pdp_text(&a), pdp_text(&b));
    assert!(a.stats.balanced());
    assert_eq!(a.blocked_users, vec![2]);
    let p = a.pair(0, 1).unwrap();
    assert!(p.connected());
    assert!((p.useful_w + p.interference_w - p.total_w).abs() <= 1e-12 * p.total_w);
    // Nothing from the blocked user arrives anywhere.
    assert!(a.total[2].iter().all(|&w| w == 0.0));
}

#[test]
fn natural_mode_uses_no_configuration() {
    let sc = parse_scenario(SMALL, None).unwrap();
    let r = run(&sc, Mode::Natural, &RunOptions::default()).unwrap();
    assert_eq!(r.configured_tiles, 0);
    assert!(r.pairs.iter().all(|p| p.useful_w == 0.0));
}

#[test]
fn report_files_and_compare() {
    let sc = parse_scenario(SMALL, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files = emit_report(&run(&sc, Mode::Pwe, &RunOptions::default()).unwrap(), &a).unwrap();
    let names: Vec<String> = files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for n in ["metrics.txt", "connectivity.txt", "tile_usage.txt", "pdp.txt"] {
        assert!(names.contains(&n.to_string()), "{n}");
    }
    emit_report(&run(&sc, Mode::Natural, &RunOptions::default()).unwrap(), &b).unwrap();
    let cmp = compare_reports(&a, &b).unwrap();
    let row = cmp.lines().find(|l| l.starts_with("0 1 ")).unwrap();
    assert_eq!(row.split_whitespace().count(), 5);
    let pairs = parse_metrics_pairs(&std::fs::read_to_string(a.join("metrics.txt")).unwrap());
    assert!(pairs[&(0, 1)].is_some());
}

#[test]
fn dbm_formatting() {
    assert_eq!(fmt_dbm(1e-3), "0.00");
    assert_eq!(fmt_dbm(0.0), "disconnected");
}

fn pwe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pwe"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.scn");
    let bad = dir.path().join("bad.scn");
    std::fs::write(&good, SMALL).unwrap();
    std::fs::write(&bad, SMALL.replace("room 6 6 3", "room 6 6")).unwrap();

    let out = pwe().arg("validate").arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let out = pwe().arg("validate").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = pwe().arg("run").arg(dir.path().join("missing.scn")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = pwe().arg("run").arg(&good).arg("--seed").arg("3").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed = 3"));
    assert!(text.lines().any(|l| l.starts_with("pair ")));

    let rep = dir.path().join("rep");
    let out = pwe().args(["run", "--mode", "natural", "--out"]).arg(&rep).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(rep.join("metrics.txt").exists());
    let out = pwe().arg("compare").arg(&rep).arg(&rep).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
