//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "multidepth.h"

int main(void) {
    enum { H = 8, W = 8 };
    float rgb[H * W * 3], depth[H * W], out[H * W];
    for (int i = 0; i < H * W * 3; i++) rgb[i] = (float)(i % 5) / 5.0f;
    for (int i = 0; i < H * W; i++) depth[i] = 2.0f + 0.01f * (float)i;
    MdRefiner *r = NULL;
    if (md_refiner_new_identity(2, 4, &r) != MD_STATUS_OK) return 1;
    md_refiner_set_noise(r, 0.0);
    if (md_refine(r, rgb, depth, NULL, H, W, out) != MD_STATUS_OK) return 2;
    for (int i = 0; i < H * W; i++) if (out[i] != depth[i]) return 3;
    if (md_refine(NULL, rgb, depth, NULL, H, W, out) != MD_STATUS_NULL_POINTER) return 4;
    if (md_last_error() == NULL) return 5;
    md_refiner_free(r);
    printf("ok %s\n", md_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<this test>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libmultidepth_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("ok {}", env!("CARGO_PKG_VERSION")));
}
