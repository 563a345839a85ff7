//! Compiles and runs a small C program against the generated header and
//! the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "cmdt.h"

int main(void) {
    CmdtSchedule *s = NULL;
    if (cmdt_schedule_new(500, 1e-4, 0.02, &s) != CMDT_STATUS_OK) return 1;
    double ab = 0.0;
    if (cmdt_schedule_alpha_bar(s, 500, &ab) != CMDT_STATUS_OK) return 2;
    cmdt_schedule_free(s);
    if (fabs(ab - 0.00635271079701505) > 1e-12) return 3;
    if (cmdt_schedule_new(0, 1e-4, 0.02, &s) != CMDT_STATUS_INVALID_ARGUMENT) return 4;
    char msg[128];
    if (cmdt_last_error_message(msg, sizeof msg) == 0) return 5;
    printf("%s %.15f\n", cmdt_version(), ab);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libcmdt_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        eprintln!("skipping: static library not found next to the test binary");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with(env!("CARGO_PKG_VERSION")), "{text}");
}
