//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "diffsim2d.h"

static const char *SCENE =
    "{\"mesh\": {\"vertices\": [[0,0],[1,0],[0,1]], \"triangles\": [[0,1,2]]},"
    " \"materials\": {\"lambda\": 1.0, \"mu\": 1.0},"
    " \"time\": {\"dt\": 0.1, \"steps\": 3},"
    " \"gravity\": [0, -1]}";

int main(void) {
    DsScene *scene = NULL;
    if (ds_scene_from_json(SCENE, &scene) != DS_STATUS_OK) return 10;
    DsRun *run = NULL;
    if (ds_simulate(scene, &run) != DS_STATUS_OK) return 11;
    size_t ns = 0, nd = 0;
    ds_run_shape(run, &ns, &nd);
    double u[6];
    if (ds_run_state(run, ns - 1, u, NULL, 6) != DS_STATUS_OK) return 12;
    printf("%zu %zu %.17g\n", ns, nd, u[1]);
    DsScene *bad = NULL;
    if (ds_scene_from_json("{}", &bad) != DS_STATUS_INPUT) return 13;
    if (strstr(ds_last_error(), "mesh") == NULL) return 14;
    ds_run_free(run);
    ds_scene_free(scene);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // the test executable lives in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.ancestors()
        .nth(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("../../target/debug"))
}

#[test]
fn header_compiles_and_links() {
    let lib = target_dir().join("libdiffsim2d_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile_dir();
    let src = dir.join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.join("main");
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
        .expect("a C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(&fields[..2], ["4", "6"]);
    // falls under gravity
    let uy: f64 = fields[2].parse().unwrap();
    assert!(uy < 0.0);
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("diffsim2d-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
