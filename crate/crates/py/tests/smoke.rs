use std::path::PathBuf;
use std::process::Command;

fn cdylib() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    let profile = exe.parent().unwrap().parent().unwrap();
    profile.join("librefinery_py.so")
}

#[test]
fn python_smoke_test_passes() {
    let lib = cdylib();
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let python = std::env::var("PYTHON").unwrap_or_else(|_| "python3".into());
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("python/smoke_test.py");
    let out = match Command::new(&python).arg(&script).env("REFINERY_PY_LIB", &lib).output() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipping: cannot run {python}: {e}");
            return;
        }
    };
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "smoke test failed\n{stdout}\n{stderr}");
    assert!(stdout.contains("smoke test ok"));
}
