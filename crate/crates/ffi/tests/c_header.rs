//! Compiles a C program against the header and, when the static library is
//! present, links and runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "rgbd_avatar.h"

int main(void) {
    if (rgbd_abi_version() != RGBD_ABI_VERSION || rgbd_frame_len() != RGBD_FRAME_LEN) return 10;
    rgbd_expression e = {0, 0, 0, 0, 1, 1, 0, 0, 0};
    float xy[2 * RGBD_LANDMARK_COUNT], back[2 * RGBD_LANDMARK_COUNT];
    if (rgbd_synth_landmarks(7, &e, xy) != RGBD_OK) return 11;
    uint8_t frame[RGBD_FRAME_LEN];
    if (rgbd_encode_frame(xy, 5, 99, frame, sizeof frame) != RGBD_OK) return 12;
    uint32_t seq = 0;
    if (rgbd_decode_frame(frame, sizeof frame, back, &seq, NULL) != RGBD_OK || seq != 5) return 13;
    if (rgbd_encode_frame(xy, 0, 0, frame, 3) != RGBD_INVALID_ARGUMENT) return 14;
    if (strlen(rgbd_last_error()) == 0) return 15;
    rgbd_generator *g = NULL;
    if (rgbd_generator_open("/nonexistent", &g) != RGBD_IO || g != NULL) return 16;
    rgbd_generator_free(g);
    printf("ok\n");
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).parent().expect("target dir").to_path_buf()
}

#[test]
fn header_compiles_and_links() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let syntax = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .expect("a C compiler");
    assert!(syntax.success());

    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target_dir().join(profile).join("librgbd_avatar_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let exe = dir.path().join("main");
    let link = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(link.success());
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
