use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use friendly_attack::attack::AttackVector;
use friendly_attack::eval::read_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_friendly-attack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const REP: &str = "\
code.family = repetition
code.n = 3
decoder.iters = 2
search.approach = 1
search.batch_size = 500
search.iterations = 10
search.eps0 = 0.05
search.ebn0_db = 0
eval.frames = 2000
eval.ebn0_db = 2
eval.grid = 1:1:5
";

#[test]
fn search_writes_loadable_deterministic_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rep.cfg", REP);
    let a1 = dir.path().join("a1.json");
    let a2 = dir.path().join("a2.json");
    for out in [&a1, &a2] {
        let o = run(&["search", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (v1, v2) = (AttackVector::load(&a1).unwrap(), AttackVector::load(&a2).unwrap());
    assert_eq!(v1.code_id, "rep-3-1");
    assert_eq!(v1.a.len(), 3);
    let strip = |v: &AttackVector| AttackVector { created: 0, ..v.clone() }.to_json().unwrap();
    assert_eq!(strip(&v1), strip(&v2));
    let log = String::from_utf8_lossy(&run(&["search", "--config", &cfg, "--out", a1.to_str().unwrap()]).stderr).into_owned();
    assert!(log.contains("trial") && (log.contains("accept") || log.contains("reject")), "{log}");
}

#[test]
fn misspelled_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "search.bacth_size = 100\n");
    let o = run(&["search", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bacth_size"));
}

#[test]
fn sweep_emits_one_row_per_point_and_pairs_with_attack() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rep.cfg", REP);
    let o = run(&["sweep", "--config", &cfg]);
    assert!(o.status.success());
    let rows = read_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.attacked == 0 && r.frames == 2000));

    let attack = dir.path().join("a.json");
    let mut v = AttackVector::zero("rep-3-1", friendly_attack::modem::Scheme::Bpsk, 3);
    v.a = vec![0.05, -0.02, 0.01];
    v.save(&attack).unwrap();
    let csv = dir.path().join("out.csv");
    let o = run(&["sweep", "--config", &cfg, "--attack", attack.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    for pair in rows.chunks(2) {
        assert_eq!((pair[0].attacked, pair[1].attacked), (0, 1));
        assert_eq!(pair[0].seed, pair[1].seed);
        assert_eq!(pair[0].ebn0_db, pair[1].ebn0_db);
    }
    // Same seed, different worker count: identical output.
    let a = run(&["sweep", "--config", &cfg, "--workers", "1"]).stdout;
    let b = run(&["sweep", "--config", &cfg, "--workers", "3"]).stdout;
    assert_eq!(a, b);
}

#[test]
fn mismatched_attack_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rep.cfg", REP);
    let attack = dir.path().join("a.json");
    AttackVector::zero("ldpc-64-32", friendly_attack::modem::Scheme::Bpsk, 64)
        .save(&attack)
        .unwrap();
    let o = run(&["eval", "--config", &cfg, "--attack", attack.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "rep.cfg", REP);
    let rows = read_csv(run(&["eval", "--config", &cfg, "--seed", "77"]).stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].seed, 77);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ldpc = write(dir.path(), "ldpc.cfg", "code.family = ldpc\ndecoder.iters = 5\n");
    let o = run(&["gradcheck", "--config", &ldpc]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let rep = write(dir.path(), "rep.cfg", REP);
    let o = run(&["gradcheck", "--config", &rep]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    let bp_err: f64 = text
        .lines()
        .find(|l| l.starts_with("bp_backward"))
        .and_then(|l| l.rsplit(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(bp_err < 1e-6, "{text}");

    let saturated = write(dir.path(), "sat.cfg", "decoder.clamp = 0.01\n");
    let o = run(&["gradcheck", "--config", &saturated]);
    assert!(matches!(o.status.code(), Some(0) | Some(4)));
    if o.status.code() == Some(4) {
        assert!(String::from_utf8_lossy(&o.stderr).contains("coordinate"));
    }
}

#[test]
fn require_nonzero_fails_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "hi.cfg",
        "code.family = repetition\nsearch.batch_size = 10\nsearch.iterations = 2\nsearch.max_trials = 3\nsearch.ebn0_db = 60\nsearch.require_nonzero = true\n",
    );
    let o = run(&["search", "--config", &cfg, "--out", dir.path().join("z.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
