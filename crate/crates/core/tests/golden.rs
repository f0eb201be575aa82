//! Checked-in activation dumps for the fixture models. Each case directory
//! holds one dump named by its content hash, so any change to the reference
//! output shows up as a missing file. Regenerate with
//! `SQ8_BLESS=1 cargo test -p sq8-core --test golden`.

use std::path::PathBuf;

use sq8_core::engine::run_local_inference;
use sq8_core::fixture;
use sq8_core::model::{InputImage, Sq8Model};
use sq8_core::oracle::reference::{golden_bytes, golden_file_name, parse_golden};
use sq8_core::oracle::{reference_infer, Inference};
use sq8_core::transport::local_mesh;
use sq8_core::trunc::TruncKind;
use sq8_core::Ring;

fn cases() -> Vec<(&'static str, Sq8Model, InputImage)> {
    let a = fixture::random_model(11);
    let ai = fixture::random_input(&a, 12);
    let b = fixture::random_mixed_model(13);
    let bi = fixture::random_input(&b, 14);
    vec![("conv_pool_fc", a, ai), ("depthwise_avg_mixed", b, bi)]
}

fn case_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn expected(name: &str, computed: &Inference) -> Inference {
    let dir = case_dir(name);
    let bytes = golden_bytes(computed);
    let file = dir.join(golden_file_name(&bytes));
    if std::env::var_os("SQ8_BLESS").is_some() && !file.exists() {
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(&file, &bytes).unwrap();
    }
    let stored: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map(|d| d.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    assert_eq!(
        stored,
        vec![file.clone()],
        "{name}: reference output changed or golden missing; rerun with SQ8_BLESS=1 after review"
    );
    let on_disk = std::fs::read(&file).unwrap();
    assert_eq!(golden_file_name(&on_disk), golden_file_name(&bytes), "{name}: file content does not match its name");
    parse_golden(&on_disk).unwrap()
}

#[test]
fn reference_matches_golden() {
    for (name, model, image) in cases() {
        let got = reference_infer(&model, &image).unwrap();
        assert_eq!(got, expected(name, &got), "{name}");
    }
}

#[test]
fn exact_secure_inference_matches_golden() {
    for (name, model, image) in cases() {
        let want = expected(name, &reference_infer(&model, &image).unwrap());
        let ring = Ring::new(model.header.ring_bits).unwrap();
        let reports = run_local_inference(&model, &image, ring, TruncKind::Exact, 21, true, local_mesh()).unwrap();
        for r in &reports {
            assert_eq!(r.label, want.label, "{name}");
            assert_eq!(r.activations.as_ref().unwrap(), &want.activations, "{name}");
        }
    }
}
