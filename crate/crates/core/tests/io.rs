use std::fs;

use monoe_core::io::{
    load_checkpoint, read_csv, read_dataset, report_row, save_checkpoint, write_csv, write_dataset, Checkpoint,
    DatasetFile, CSV_HEADER,
};
use monoe_core::metrics::MetricsReport;
use monoe_core::nn::{ClassifierConfig, GeneratorConfig};
use monoe_core::phantom::{make_dataset, PhantomSpec, Role};
use monoe_core::trainer::{generator_l1_step, stack, Models};
use monoe_core::{Error, TrainConfig, TrainMode};

fn tiny(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        image_size: 16,
        generator: GeneratorConfig { in_channels: 1, base_channels: 4, n_blocks: 1 },
        classifier: ClassifierConfig { in_channels: 1, base_channels: 4, n_stages: 2 },
        ..TrainConfig::desk(mode)
    }
}

#[test]
fn dataset_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (i, role) in [Role::Paired, Role::Labeled, Role::Eval].into_iter().enumerate() {
        let recs = make_dataset(&PhantomSpec::with_size(16), 3, 2, role, i as u64).unwrap();
        let a = dir.path().join(format!("a{i}.dect"));
        let b = dir.path().join(format!("b{i}.dect"));
        write_dataset(&a, &DatasetFile::from_records(recs.clone()).unwrap()).unwrap();
        let loaded = read_dataset(&a).unwrap();
        assert_eq!(loaded.records, recs);
        write_dataset(&b, &loaded).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}

#[test]
fn truncated_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.dect");
    let recs = make_dataset(&PhantomSpec::with_size(16), 1, 2, Role::Eval, 0).unwrap();
    write_dataset(&p, &DatasetFile::from_records(recs).unwrap()).unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_dataset(&p), Err(Error::Format { .. })));
}

fn trained_checkpoint() -> Checkpoint {
    let config = tiny(TrainMode::Joint);
    let mut models = Models::init(&config, 1).unwrap();
    let recs = make_dataset(&PhantomSpec::with_size(16), 1, 2, Role::Paired, 0).unwrap();
    let x = stack(recs.iter().map(|r| &r.poly)).unwrap();
    let y = stack(recs.iter().map(|r| r.mono.as_ref().unwrap())).unwrap();
    generator_l1_step(models.generator.as_mut().unwrap(), &x, &y, &config.adam, 1e-3).unwrap();
    Checkpoint { config, fold: 1, epoch: 3, models, optimizer_state: true }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ck = trained_checkpoint();
    save_checkpoint(&a, &ck).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded.fold, 1);
    assert_eq!(loaded.epoch, 3);
    assert_eq!(
        loaded.models.generator.as_ref().unwrap().params.fingerprint(),
        ck.models.generator.as_ref().unwrap().params.fingerprint()
    );
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn classifier_only_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny(TrainMode::ClassifierOnly);
    let ck = Checkpoint { models: Models::init(&config, 0).unwrap(), config, fold: 0, epoch: 1, optimizer_state: false };
    save_checkpoint(dir.path(), &ck).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert!(loaded.models.generator.is_none());
    assert_eq!(loaded.models.classifier.params.fingerprint(), ck.models.classifier.params.fingerprint());
}

#[test]
fn corrupted_blob_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &trained_checkpoint()).unwrap();
    let blob = dir.path().join("params.bin");
    let bytes = fs::read(&blob).unwrap();

    fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));

    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0; 4]);
    fs::write(&blob, &longer).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));

    fs::write(&blob, &bytes).unwrap();
    let manifest = dir.path().join("manifest.txt");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replacen(" 7 7 ", " 7 5 ", 1)).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));
}

#[test]
fn csv_round_trip_and_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    let rep = MetricsReport {
        fold_id: 2,
        epoch: 4,
        psnr_mean: 26.020599913,
        psnr_std: 0.5,
        ssim_mean: f64::NAN,
        ssim_std: f64::NAN,
        auroc: Ok(0.75),
    };
    let row = report_row(TrainMode::Joint, "val", &rep);
    write_csv(&p, std::slice::from_ref(&row), false).unwrap();
    write_csv(&p, &[row], true).unwrap();
    let text = fs::read_to_string(&p).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER.join(","));
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], "joint,2,4,val,nan,nan,26.020600,0.500000,nan,nan,0.750000");
    assert_eq!(read_csv(&p).unwrap().len(), 2);
}
