use std::path::Path;

use proptest::prelude::*;
use serde_json::Value;
use shell_ld::integrate_sde;
use shell_ld::rng::member_stream;
use shell_ld_cli::config::{parse_config, parse_config_with};
use shell_ld_cli::export::{trajectory_from_binary, Table};
use shell_ld_cli::manifest::{content_id, sha256_hex};
use shell_ld_cli::{hashed_config_text, run_with, EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(dir: &Path, config: &str, args: &[&str]) -> Run {
    let cfg = dir.join("run.ini");
    std::fs::write(&cfg, config).unwrap();
    let mut argv = vec!["shell-ld".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.extend([
        "--config".into(),
        cfg.display().to_string(),
        "--out".into(),
        dir.join("out").display().to_string(),
    ]);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn json_line(s: &str) -> Value {
    serde_json::from_str(s.trim()).unwrap_or_else(|e| panic!("not one JSON line ({e}): {s}"))
}

const SMALL: &str = "seed = 3\n[model]\nN = 4\nnu = 0.5\n[grid]\nsteps = 50\nT = 0.5\n[experiment]\nepsilon = 0.01\n";

fn section_text(fields: &[(String, String)]) -> String {
    let mut by_section: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    let mut top = String::new();
    for (path, v) in fields {
        match path.split_once('.') {
            Some((s, k)) => by_section
                .entry(s.to_string())
                .or_default()
                .push(format!("{k} = {v}")),
            None => top.push_str(&format!("{path} = {v}\n")),
        }
    }
    let mut text = top;
    for (s, lines) in by_section {
        text.push_str(&format!("[{s}]\n{}\n", lines.join("\n")));
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_serialization_round_trips(
        n in 1usize..24,
        seed in any::<u64>(),
        nu in 1e-4..10.0f64,
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
        sabra in any::<bool>(),
        steps in 1usize..5000,
        eps in prop::collection::vec(1e-6..1.0f64, 1..6),
        real in any::<bool>(),
        format in 0usize..3,
    ) {
        let c = -(a + b);
        let fields = vec![
            ("seed".to_string(), seed.to_string()),
            ("model.N".into(), n.to_string()),
            ("model.nu".into(), nu.to_string()),
            ("model.a".into(), a.to_string()),
            ("model.b".into(), b.to_string()),
            ("model.c".into(), c.to_string()),
            ("model.variant".into(), if sabra { "Sabra".into() } else { "goy".into() }),
            ("grid.steps".into(), steps.to_string()),
            ("noise.convention".into(), if real { "real".into() } else { "complex".into() }),
            ("experiment.eps_list".into(), eps.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" , ")),
            ("output.format".into(), ["ndjson", "csv", "binary"][format].to_string()),
        ];
        let cfg = parse_config(&section_text(&fields)).unwrap();
        let canonical = cfg.to_canonical_string();
        let again = parse_config(&canonical).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.to_canonical_string(), canonical);
        prop_assert_eq!(cfg.list("experiment", "eps_list"), eps.as_slice());
        prop_assert_eq!(cfg.float("model", "nu"), nu);
    }
}

#[test]
fn overrides_match_file_values() {
    let a = parse_config_with(SMALL, &["model.nu=0.25".into(), "grid.steps = 80".into()]).unwrap();
    let b = parse_config(
        &SMALL
            .replace("nu = 0.5", "nu = 0.25")
            .replace("steps = 50", "steps = 80"),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        "[model]\nN = 4\n\n[grid]\nstep = 10\n",
        &["simulate"],
    );
    assert_eq!(r.code, EXIT_CONFIG);
    let e = json_line(&r.stderr);
    assert_eq!(e["error"], "config");
    assert_eq!(e["line"], 5);
    assert!(e["message"].as_str().unwrap().contains("grid.step"));
    assert!(r.stdout.is_empty());
}

#[test]
fn conservation_violation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        "[model]\nN = 4\na = -1\nb = 0.5\nc = 0.25\n",
        &["skeleton"],
    );
    assert_eq!(r.code, EXIT_CONFIG);
    let e = json_line(&r.stderr);
    assert_eq!(e["line"], 5);
    assert!(e["message"].as_str().unwrap().contains("a + b + c = 0"));
}

#[test]
fn usage_errors_and_help() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(
        run_with(["shell-ld", "no-such-command"], &mut out, &mut err),
        EXIT_CONFIG
    );
    assert_eq!(
        json_line(std::str::from_utf8(&err).unwrap())["error"],
        "usage"
    );
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(
        run_with(
            ["shell-ld", "simulate", "--workers", "0"],
            &mut out,
            &mut err
        ),
        EXIT_CONFIG
    );
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(
        run_with(["shell-ld", "--help"], &mut out, &mut err),
        EXIT_OK
    );
    assert!(String::from_utf8(out).unwrap().contains("ldp-check"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(
        ["shell-ld", "simulate", "--config", "/nonexistent/run.ini"],
        &mut out,
        &mut err,
    );
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn ndjson_and_csv_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), SMALL, &["simulate"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let nd = std::fs::read_to_string(dir.path().join("out/trajectory.ndjson")).unwrap();
    assert_eq!(nd.lines().count(), 51);
    let first = json_line(nd.lines().next().unwrap());
    assert_eq!(first.as_object().unwrap().len(), 9);
    // floats use 17 significant digits in scientific notation
    assert!(nd
        .lines()
        .nth(1)
        .unwrap()
        .contains("\"t\":1.0000000000000000e-2"));

    let r = run(dir.path(), SMALL, &["simulate", "--format", "csv"]);
    assert_eq!(r.code, EXIT_OK);
    let csv = std::fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,re_1,im_1,re_2,im_2,re_3,im_3,re_4,im_4"
    );
    assert!(lines.clone().all(|l| l.split(',').count() == 2 * 4 + 1));
    assert_eq!(lines.count(), 51);
}

#[test]
fn binary_trajectory_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), SMALL, &["simulate", "--format", "binary"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let bytes = std::fs::read(dir.path().join("out/trajectory.bin")).unwrap();
    assert_eq!(&bytes[..5], b"SHLD1");
    assert_eq!(u16::from_le_bytes([bytes[5], bytes[6]]), 1);
    let back = trajectory_from_binary(&bytes).unwrap();

    let cfg = parse_config(SMALL).unwrap();
    let direct = integrate_sde(
        &cfg.model().unwrap(),
        0.01,
        &cfg.initial_state().unwrap(),
        &cfg.grid().unwrap(),
        &mut member_stream(3, 0),
    )
    .unwrap();
    assert_eq!(back.grid, direct.grid);
    let bits = |t: &shell_ld::Trajectory<f64>| -> Vec<u64> {
        t.states
            .iter()
            .flat_map(|u| {
                u.iter()
                    .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    assert_eq!(bits(&back), bits(&direct));
    assert_eq!(shell_ld_cli::export::trajectory_to_binary(&back), bytes);

    let budget =
        Table::from_binary(&std::fs::read(dir.path().join("out/budget.bin")).unwrap()).unwrap();
    assert_eq!(budget.rows.len(), 51);
    assert_eq!(budget.columns[0], "t");
}

#[test]
fn manifest_records_hash_seed_and_content_ids() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(dir.path(), SMALL, &["skeleton", "--seed", "42"]);
    assert_eq!(r.code, EXIT_OK);
    let m: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["seed"], 42);
    assert_eq!(m["subcommand"], "skeleton");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["finished_unix_ms"].as_u64().unwrap() >= m["started_unix_ms"].as_u64().unwrap());
    let cfg = parse_config_with(SMALL, &["seed=42".into()]).unwrap();
    assert_eq!(
        m["config_hash"],
        sha256_hex(hashed_config_text(&cfg).as_bytes())
    );
    for o in m["outputs"].as_array().unwrap() {
        let data = std::fs::read(dir.path().join("out").join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["content_id"], content_id(&data));
        assert_eq!(o["bytes"], data.len());
    }
    let s = json_line(&r.stdout);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["config_hash"], m["config_hash"]);

    // the output directory does not enter the hash
    let other = tempfile::tempdir().unwrap();
    run(other.path(), SMALL, &["skeleton", "--seed", "42"]);
    let m2: Value =
        serde_json::from_slice(&std::fs::read(other.path().join("out/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config_hash"], m2["config_hash"]);
    assert_eq!(m["outputs"], m2["outputs"]);
}

#[test]
fn noiseless_simulation_tracks_the_skeleton() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nN = 6\nnu = 0.5\n[initial]\nkind = kolmogorov\namplitude = 0.5\n[grid]\nsteps = 1000\n[experiment]\nepsilon = 0\n";
    let last = |file: &str| -> Vec<f64> {
        let t = std::fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        let v = json_line(t.lines().last().unwrap());
        (1..=6)
            .flat_map(|m| {
                [
                    v[format!("re_{m}")].as_f64().unwrap(),
                    v[format!("im_{m}")].as_f64().unwrap(),
                ]
            })
            .collect()
    };
    assert_eq!(run(dir.path(), cfg, &["simulate"]).code, EXIT_OK);
    let sde = last("trajectory.ndjson");
    assert_eq!(run(dir.path(), cfg, &["skeleton"]).code, EXIT_OK);
    let sk = last("trajectory.ndjson");
    let gap = sde
        .iter()
        .zip(&sk)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    // first-order exponential Euler against fourth-order Lawson at dt = 1e-3
    assert!(gap > 0.0 && gap < 1e-3, "gap {gap}");
}

#[test]
fn energy_check_refuses_large_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nN = 1\na = 0\nb = 0\nc = 0\n[noise]\ncovariance = explicit\nlambda = 1\n[experiment]\nepsilon = 0.6\npaths = 4\n";
    let r = run(dir.path(), cfg, &["verify-energy"]);
    assert_eq!(r.code, EXIT_CONFIG);
    let e = json_line(&r.stderr);
    assert!(e["bound"].as_str().unwrap().contains("nu/2K"));
    assert_eq!(e["epsilon"].as_f64().unwrap(), 0.6);
}

#[test]
fn failed_invariant_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let r = run(
        dir.path(),
        &format!("{SMALL}[action]\nmax_iters = 1\n"),
        &["minimize-action"],
    );
    assert_eq!(r.code, EXIT_INVARIANT);
    let s = json_line(&r.stdout);
    assert_eq!(s["status"], "invariant_failed");
    assert_eq!(s["failed"], "converged");
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn identity_and_constant_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[model]\nN = 8\n[experiment]\nidentity_pairs = 20\nidentity_states = 50\nmonotonicity_samples = 50\nconstants_samples = 50\n";
    let r = run(dir.path(), cfg, &["check-identities"]);
    assert_eq!(r.code, EXIT_OK, "{}{}", r.stdout, r.stderr);
    let rows = std::fs::read_to_string(dir.path().join("out/identities.ndjson")).unwrap();
    assert!(rows
        .lines()
        .any(|l| l.contains("energy_identity_swapped_quarter_term")
            && l.contains("\"diagnostic\":true")));
    let r = run(dir.path(), cfg, &["constants"]);
    assert_eq!(r.code, EXIT_OK);
    let c = json_line(&std::fs::read_to_string(dir.path().join("out/constants.ndjson")).unwrap());
    assert_eq!(c["monotonicity_violations"], 0);
    // single-mode additive noise has no pointwise growth constant
    assert_eq!(c["k1"], "NaN");
}
