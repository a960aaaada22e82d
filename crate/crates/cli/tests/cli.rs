use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_velojump"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("velojump-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn dispersion_output_is_byte_identical_across_runs() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    for d in [&a, &b] {
        let st = bin().arg("--out").arg(d).args(["dispersion", "--chi", "0.3"]).output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    }
    for f in ["dispersion.csv", "dispersion.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("dispersion.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config-hash: "));
    assert_eq!(lines.next().unwrap(), "v,weight,kplus,G");
    assert_eq!(lines.count(), 32);
}

#[test]
fn invalid_configuration_exits_with_two() {
    let dir = scratch("bad");
    let st = bin().arg("--out").arg(&dir).args(["dispersion", "--chi", "1.2"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let cfg = dir.with_extension("toml");
    std::fs::write(&cfg, "[evolve]\nnx = 41\n").unwrap();
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(&dir).arg("evolve").status().unwrap();
    assert_eq!(st.code(), Some(2));
    std::fs::write(&cfg, "[model]\nspeed = 2\n").unwrap();
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(&dir).arg("dispersion").status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn evolve_from_equilibrium_keeps_a_flat_distance() {
    let dir = scratch("eq");
    let st = bin()
        .arg("--out")
        .arg(&dir)
        .args(["evolve", "--nx", "60", "--n-half", "6", "--L", "3", "--t-end", "5", "--ic", "equilibrium"])
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(lines.next().unwrap(), "t,mass,d,d_discrete");
    let d: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(d.len() > 2);
    assert!(d.iter().all(|x| (x - d[0]).abs() < 1e-10), "{d:?}");
}
