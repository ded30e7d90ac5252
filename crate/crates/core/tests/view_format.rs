//! Files laid down the way an external feature extractor writes them.

use std::fs;
use std::path::Path;

use evmv_core::data::{load_dataset, read_view_matrix, stratified_split};
use evmv_core::net::{predict_batch, train, ModelBundle, TrainConfig};
use evmv_core::Error;

fn raw_view(rows: u32, dims: u32, f: impl Fn(u32, u32) -> f32) -> Vec<u8> {
    let mut b = b"EVMV-VW1".to_vec();
    b.extend(rows.to_le_bytes());
    b.extend(dims.to_le_bytes());
    for r in 0..rows {
        for d in 0..dims {
            b.extend(f(r, d).to_le_bytes());
        }
    }
    b
}

fn write_four_view_dataset(dir: &Path, docs: u32) {
    let dims = [16u32, 8, 8, 8];
    let names = ["semantic", "symptom", "emotion", "cognitive"];
    let mut views = Vec::new();
    for (v, (&d, name)) in dims.iter().zip(names).enumerate() {
        let bytes = raw_view(docs, d, |r, j| {
            let class = (r % 2) as f32;
            let signal = if v < 2 { class * 1.5 } else { 0.0 };
            signal + ((r * 31 + j * 17 + v as u32 * 7) % 13) as f32 / 13.0 - 0.5
        });
        fs::write(dir.join(format!("{name}.vw")), bytes).unwrap();
        views.push(serde_json::json!({"name": name, "path": format!("{name}.vw"), "dims": d}));
    }
    let labels: String = (0..docs).map(|r| format!("doc-{r},{}\n", r % 2)).collect();
    fs::write(dir.join("labels.csv"), labels).unwrap();
    let manifest = serde_json::json!({
        "dataset_name": "extracted",
        "num_classes": 2,
        "labels_path": "labels.csv",
        "views": views,
    });
    fs::write(dir.join("manifest.json"), manifest.to_string()).unwrap();
}

#[test]
fn raw_bytes_load_with_declared_shape() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cognitive.vw");
    fs::write(&p, raw_view(3, 2, |r, d| (r * 10 + d) as f32)).unwrap();
    let vm = read_view_matrix(&p).unwrap();
    assert_eq!((vm.rows(), vm.dims()), (3, 2));
    assert_eq!(vm.name, "cognitive");
    assert_eq!(vm.row(2), &[20.0, 21.0]);
}

#[test]
fn four_view_extracted_dataset_trains() {
    let dir = tempfile::tempdir().unwrap();
    write_four_view_dataset(dir.path(), 60);
    let ds = load_dataset(dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.views().len(), 4);
    assert_eq!(ds.view_names(), ["semantic", "symptom", "emotion", "cognitive"]);
    let (tr, va, te) = stratified_split(&ds, (0.64, 0.16, 0.20), 42).unwrap();
    let cfg = TrainConfig {
        max_epochs: 3,
        ..Default::default()
    };
    let bundle = ModelBundle::for_dataset(&tr, &cfg).unwrap();
    let out = train(&bundle, &tr, &va, &cfg).unwrap();
    let preds = predict_batch(&out.bundle, &te).unwrap();
    assert_eq!(preds.len(), te.len());
    assert!(preds.iter().all(|p| p.per_view_opinions.len() == 4));
}

#[test]
fn declared_dims_must_match_file() {
    let dir = tempfile::tempdir().unwrap();
    write_four_view_dataset(dir.path(), 10);
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    fs::write(dir.path().join("manifest.json"), text.replacen("16", "15", 1)).unwrap();
    assert!(matches!(
        load_dataset(dir.path().join("manifest.json")),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn row_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_four_view_dataset(dir.path(), 10);
    fs::write(dir.path().join("emotion.vw"), raw_view(9, 8, |_, _| 0.0)).unwrap();
    assert!(load_dataset(dir.path().join("manifest.json")).is_err());
}
