//! Builds a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include "mdc_track.h"
#include <math.h>
#include <stdio.h>

#define CHECK(x) do { MdcStatus s_ = (x); if (s_ != MDC_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #x, (int)s_, mdc_last_error_message()); return 1; } } while (0)

int main(void) {
    MdcConfig *cfg = NULL;
    MdcDataset *ds = NULL;
    MdcReco *reco = NULL;
    MdcEvaluation *eval = NULL;
    MdcSummary sum;
    MdcTrack track;
    size_t events = 0, hits = 0, len = 0;

    if (mdc_dataset_generate(NULL, &ds) != MDC_STATUS_NULL_POINTER) return 2;
    CHECK(mdc_config_parse("seed = 5\n[generate]\nevents = 20\n", &cfg));
    CHECK(mdc_dataset_generate(cfg, &ds));
    CHECK(mdc_dataset_size(ds, &events, &hits));
    CHECK(mdc_reconstruct(cfg, ds, true, &reco));
    CHECK(mdc_reco_len(reco, &len));
    CHECK(mdc_reco_get(reco, len - 1, &track));
    if (track.stage != MDC_STAGE_FITTER || isnan(track.chi2)) return 3;
    CHECK(mdc_evaluate(cfg, ds, reco, &eval));
    CHECK(mdc_evaluation_summary(eval, MDC_STAGE_FITTER, &sum));
    printf("version %s events %zu hits %zu tracks %zu eps %.3f\n",
           mdc_version(), events, hits, len, sum.eps_track.value);
    if (events != 20 || !sum.eps_track.valid) return 4;
    mdc_evaluation_free(eval);
    mdc_reco_free(reco);
    mdc_dataset_free(ds);
    mdc_config_free(cfg);
    return 0;
}
"#;

#[test]
fn c_program_builds_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    assert!(include.join("mdc_track.h").exists());
    // Integration tests live in <target>/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmdc_track_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .expect("C compiler runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let run = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("events 20"));
}
