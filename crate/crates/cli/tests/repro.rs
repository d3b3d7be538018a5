//! Full face-corpus run with the default two-layer architecture. Takes hours,
//! so it only runs on request:
//!
//! ```text
//! MLCSC_DATA_DIR=/path/to/att_faces cargo test --release --test repro -- --ignored --nocapture
//! ```

use std::fs;

use mlcsc::diagnostics::{assess_reproduction, DEEP_DENSITY_RANGE};
use mlcsc_cli::commands::{cmd_train, FINAL_CHECKPOINT};
use mlcsc_cli::config::DATA_DIR_ENV;
use mlcsc_cli::{Checkpoint, RunConfig};
use tempfile::TempDir;

#[test]
#[ignore = "needs the face corpus and hours of compute"]
fn repro_face_corpus() {
    let data = std::env::var_os(DATA_DIR_ENV)
        .unwrap_or_else(|| panic!("set {DATA_DIR_ENV} to the directory of s1..s40 PGM folders"));
    let tmp = TempDir::new().unwrap();
    let mut cfg = RunConfig::default();
    cfg.data.path = Some(data.into());
    cfg.output.dir = tmp.path().join("run");
    let path = tmp.path().join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();

    cmd_train(&path, None, None).unwrap();
    let ck = Checkpoint::load(&cfg.output.dir.join(FINAL_CHECKPOINT)).unwrap();
    let report = assess_reproduction(&ck.state.metrics_history, ck.state.model.layer(1).unwrap(), 50, 100);
    println!("{report:#?}");
    assert!(report.mse_decreasing, "mse curve does not decrease at the 100-epoch scale");
    assert!(
        report.deep_density_ok,
        "second-layer density {:.3} (drift {:.3}) outside {:?} or unstable",
        report.final_deep_density, report.deep_density_drift, DEEP_DENSITY_RANGE
    );
    assert!(
        report.oriented,
        "first-layer orientation score {:.3} does not beat the isotropic baseline {:.3}",
        report.orientation_score, report.orientation_baseline
    );
}
