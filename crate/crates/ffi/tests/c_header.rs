//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "olseg.h"

int main(void) {
    double p[3] = {1, 2, 3}, g[3] = {2, 2, 2}, out = 0;
    uint8_t v[3] = {1, 1, 1};
    if (olseg_mad(p, g, v, 3, &out) != OLSEG_STATUS_OK || fabs(out - 2.0 / 3.0) > 1e-15) return 1;
    if (olseg_rmse(p, g, v, 3, &out) != OLSEG_STATUS_OK || fabs(out - sqrt(2.0 / 3.0)) > 1e-15) return 2;
    OlsegConfig *cfg = NULL;
    if (olseg_config_new(&cfg) != OLSEG_STATUS_OK) return 3;
    if (olseg_config_set(cfg, "bogus", "1") != OLSEG_STATUS_CONFIG) return 4;
    if (strstr(olseg_last_error(), "unknown key") == NULL) return 5;
    olseg_config_free(cfg);
    OlsegVolume *vol = NULL;
    if (olseg_volume_read("/nonexistent.octvol", &vol) == OLSEG_STATUS_OK || vol != NULL) return 6;
    if (olseg_surface_count() != 5) return 7;
    printf("%s\n", olseg_version());
    return 0;
}
"#;

#[test]
fn header_compiles_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("olseg.h").exists(), "build script writes the header");
    // Test binaries live in <target>/<profile>/deps; the library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libolseg_ffi.a");
    assert!(lib.exists(), "static library at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C program failed to build");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit status {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
