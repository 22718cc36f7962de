use std::collections::BTreeSet;

use super::archive::{Archive, ArchiveKind, BasisSource, MAGIC};
use super::config::RunConfig;
use super::*;
use crate::error::Error;
use crate::models::{train, CnnConfig, ModelConfig, PreparedDataset};
use crate::preprocess::{DataType, ExportConfig, TargetNorm};
use crate::spectra::{Acquisition as Acq, PpmAxis};
use crate::synthesis::{default_peak_table, generate_dataset, generate_lorentzian_basis, LinewidthMode, SynthesisConfig};

fn axis() -> PpmAxis {
    PpmAxis::with_defaults(1024, 2000.0).unwrap()
}

fn synth(n: usize) -> SynthesisConfig {
    SynthesisConfig {
        n_samples: n,
        noise_sigma_range: [0.0, 0.02],
        linewidth_mode: LinewidthMode::Fixed(2.0),
        master_seed: 11,
        sobol_skip: 0,
    }
}

fn export() -> ExportConfig {
    ExportConfig::new([Acq::Off, Acq::On], [DataType::Real], TargetNorm::Sum).with_points(128)
}

#[test]
fn empty_prepared_archive_round_trips() {
    let d = PreparedDataset::empty(vec!["NAA".into(), "Cr".into()], export());
    let a = Archive::from_prepared(&d).unwrap();
    let b = Archive::from_bytes(&a.to_bytes().unwrap()).unwrap();
    assert_eq!(b.manifest.n_samples, 0);
    assert_eq!(b.to_prepared().unwrap(), d);
}

#[test]
fn raw_archive_is_bit_identical() {
    let basis = generate_lorentzian_basis(&default_peak_table(), 2.0, &axis()).unwrap();
    let data = generate_dataset(&basis, &synth(10)).unwrap();
    let a = Archive::from_labelled(&data, axis()).unwrap();
    let bytes = a.to_bytes().unwrap();
    let back = Archive::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes().unwrap(), bytes);
    let restored = back.to_labelled().unwrap();
    assert_eq!(restored.metabolites, data.metabolites);
    assert_eq!(restored.config, data.config);
    for (x, y) in restored.samples.iter().zip(&data.samples) {
        assert_eq!(x.target, y.target);
        assert_eq!(x.meta, y.meta);
        for (p, q) in x.acquisitions.iter().zip(y.acquisitions.iter()) {
            assert_eq!(p.values(), q.values());
        }
        for (p, q) in x.clean_acquisitions.iter().zip(y.clean_acquisitions.iter()) {
            assert_eq!(p.values(), q.values());
        }
    }
}

#[test]
fn prepared_archive_round_trips() {
    let basis = generate_lorentzian_basis(&default_peak_table(), 2.0, &axis()).unwrap();
    let d = PreparedDataset::synthesize(&basis, &synth(10), &export()).unwrap();
    let a = Archive::from_prepared(&d).unwrap();
    assert_eq!(a.manifest.kind, ArchiveKind::Prepared);
    assert_eq!(Archive::from_bytes(&a.to_bytes().unwrap()).unwrap().to_prepared().unwrap(), d);
}

#[test]
fn basis_archive_round_trips() {
    let src = BasisSource {
        peaks: default_peak_table(),
        fwhm: 2.0,
        axis: axis(),
    };
    let basis = generate_lorentzian_basis(&src.peaks, src.fwhm, &src.axis).unwrap();
    let a = Archive::from_basis(&basis, Some(src.clone())).unwrap();
    let back = Archive::from_bytes(&a.to_bytes().unwrap()).unwrap();
    assert_eq!(back.manifest.basis, Some(src));
    let b = back.to_basis().unwrap();
    assert_eq!(b.metabolites(), basis.metabolites());
    for m in 0..basis.len() {
        for acq in [Acq::Off, Acq::On] {
            assert_eq!(b.fid(m, acq).unwrap(), basis.fid(m, acq).unwrap());
        }
    }
}

fn small_bytes() -> Vec<u8> {
    let basis = generate_lorentzian_basis(&default_peak_table(), 2.0, &axis()).unwrap();
    let d = PreparedDataset::synthesize(&basis, &synth(3), &export()).unwrap();
    Archive::from_prepared(&d).unwrap().to_bytes().unwrap()
}

#[test]
fn flipped_payload_byte_is_corruption() {
    let mut bytes = small_bytes();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x01;
    assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Corruption(_))));
}

#[test]
fn bad_magic_is_corruption() {
    let mut bytes = small_bytes();
    bytes[0] = b'X';
    assert!(matches!(Archive::from_bytes(&bytes), Err(Error::Corruption(_))));
    assert!(matches!(Archive::from_bytes(&bytes[..5]), Err(Error::Corruption(_))));
}

#[test]
fn other_version_needs_migration() {
    let bytes = small_bytes();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut m: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    m["version"] = serde_json::json!(2);
    let json = serde_json::to_vec(&m).unwrap();
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[16 + len..]);
    assert!(matches!(
        Archive::from_bytes(&out),
        Err(Error::Migration { found: 2, expected: 1 })
    ));
}

#[test]
fn out_of_order_metabolites_are_rejected() {
    let d = PreparedDataset::empty(vec!["Cr".into(), "NAA".into()], export());
    assert!(matches!(Archive::from_prepared(&d).and_then(|a| a.to_bytes()), Err(Error::Contract(_))));
}

#[test]
fn stamp_is_deterministic() {
    let a = stamp("train", b"{}", 3);
    assert_eq!(a, stamp("train", b"{}", 3));
    assert_ne!(a["config_sha256"], stamp("train", b"{ }", 3)["config_sha256"]);
    assert_eq!(a["seed"], "3");
}

#[test]
fn checkpoint_dispatches_on_precision() {
    let basis = generate_lorentzian_basis(&default_peak_table(), 2.0, &axis()).unwrap();
    let d = PreparedDataset::synthesize(&basis, &synth(16), &export()).unwrap();
    let mut c = CnnConfig::grid_default(export());
    c.batch_size = 8;
    let cfg = ModelConfig::Cnn(c);
    let dir = tempfile::tempdir().unwrap();
    for f64_model in [false, true] {
        let model = if f64_model {
            AnyModel::F64(train::<f64>(&cfg, &d, 1, 5).unwrap())
        } else {
            AnyModel::F32(train::<f32>(&cfg, &d, 1, 5).unwrap())
        };
        let ck = Checkpoint {
            stamp: stamp("train", b"x", 5),
            model,
        };
        let path = dir.path().join("m.json");
        ck.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        assert_eq!(matches!(back.model, AnyModel::F64(_)), f64_model);
        assert_eq!(back.model.predict(&d).unwrap(), ck.model.predict(&d).unwrap());
        let log = dir.path().join("log.csv");
        write_training_log(&log, back.model.log()).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,val_mae,w_q\n"));
        assert_eq!(text.lines().count(), 2);
    }
}

#[test]
fn run_config_rejects_unknown_fields() {
    assert!(matches!(RunConfig::from_json(r#"{"trainig": {}}"#), Err(Error::Json(_))));
    let ok = r#"{"training": {"epochs": 3}, "evaluation": {"experiment_size": 4}}"#;
    let c = RunConfig::from_json(ok).unwrap();
    assert_eq!(c.training.unwrap().validation_fraction, 0.2);
}

#[test]
fn run_config_validates_sections() {
    let bad_epochs = r#"{"training": {"epochs": 0}}"#;
    assert!(matches!(RunConfig::from_json(bad_epochs), Err(Error::Config(_))));
    let narrow = r#"{"basis": {"fwhm": 3.0}, "synthesis": {"n_samples": 4, "noise_sigma_range": [0, 0.01],
        "linewidth_mode": {"fixed": 2.0}, "master_seed": 1}}"#;
    assert!(matches!(RunConfig::from_json(narrow), Err(Error::Config(_))));
    let both = r#"{"basis": {"path": "b.mqd", "peaks": []}}"#;
    assert!(matches!(RunConfig::from_json(both), Err(Error::Config(_))));
    let bad_set: BTreeSet<Acq> = BTreeSet::new();
    let mut e = export();
    e.acquisitions = bad_set;
    let c = RunConfig {
        export: Some(e),
        ..RunConfig::from_json("{}").unwrap()
    };
    assert!(c.validate().is_err());
}
