//! Compiles and runs a C program against the generated header and the
//! static library. Skipped when no C compiler or static library is found.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "agesim.h"

int main(void) {
    double p = 0.0;
    if (agesim_p_duty_deviation(20, 0.5, 6, &p) != AGESIM_STATUS_OK) return 1;
    if (fabs(p - 120920.0 / 1048576.0) > 1e-12) return 2;
    if (agesim_p_duty_deviation(20, 2.0, 6, &p) != AGESIM_STATUS_INVALID_ARGUMENT) return 3;
    if (agesim_last_error() == NULL) return 4;

    AgesimPolicy pol = { AGESIM_POLICY_BARREL, 7, 0.5, 4, true, false, 1 };
    AgesimEncoder *enc = NULL;
    if (agesim_encoder_new(&pol, 64, 2, &enc) != AGESIM_STATUS_OK) return 5;
    uint64_t in = 0x0123456789abcdefULL, out = 0, back = 0;
    AgesimControl ctl;
    for (int i = 0; i < 3; i++)
        if (agesim_encoder_encode(enc, &in, 1, 0, &out, &ctl) != AGESIM_STATUS_OK) return 6;
    if (ctl.kind != 2 || ctl.value != 2) return 7;
    if (agesim_decode(&out, 1, 64, ctl, &back) != AGESIM_STATUS_OK || back != in) return 8;
    agesim_encoder_free(enc);

    const char *toml =
        "inferences = 1\n"
        "[network]\nsource = \"random-bits\"\nrho = 0.5\nblocks = 2\n"
        "[accelerator]\nkind = \"baseline\"\nmemory_bytes = 1024\n";
    AgesimConfig *cfg = NULL;
    AgesimResult *res = NULL;
    AgesimSummary s;
    if (agesim_config_from_toml(toml, &cfg) != AGESIM_STATUS_OK) return 9;
    if (agesim_run(cfg, &res) != AGESIM_STATUS_OK) return 10;
    if (agesim_result_summary(res, &s) != AGESIM_STATUS_OK || s.total_k != 2) return 11;
    agesim_result_free(res);
    agesim_config_free(cfg);
    printf("ok %s\n", agesim_version());
    return 0;
}
"#;

fn find_static_lib() -> Option<PathBuf> {
    let exe = env::current_exe().ok()?;
    let deps = exe.parent()?;
    [deps.parent()?, deps]
        .iter()
        .map(|d| d.join("libagesim_ffi.a"))
        .find(|p| p.exists())
}

fn compiler() -> Option<String> {
    let cc = env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok()?.status.success().then_some(cc)
}

#[test]
fn c_program_links_and_runs() {
    let (Some(cc), Some(lib)) = (compiler(), find_static_lib()) else {
        eprintln!("skipped: C compiler or libagesim_ffi.a not available");
        return;
    };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    fs::write(&src, PROGRAM).unwrap();
    let status = Command::new(&cc)
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
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke test exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}

#[test]
fn header_declares_every_export() {
    let header = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/agesim.h")).unwrap();
    let src = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for line in src.lines() {
        if let Some(rest) = line.split("extern \"C\" fn ").nth(1) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from agesim.h");
        }
    }
}
