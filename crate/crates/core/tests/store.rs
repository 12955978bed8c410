use mixsr_core::experts::{ExpertConfig, ScnConfig, SrcnnConfig};
use mixsr_core::mixture::{GateActivation, MixtureConfig, MixtureNetwork, WeightModuleConfig};
use mixsr_core::store::{
    from_bytes, load_model, read_manifest, save_model, to_bytes, TrainingInfo,
};
use mixsr_core::{Error, Parameterized, Shape, StoreError, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scn(n: usize) -> ExpertConfig {
    ExpertConfig::Scn(ScnConfig::with_dict_size(n))
}

fn mixed() -> MixtureNetwork {
    let cfg = MixtureConfig {
        experts: vec![scn(8), ExpertConfig::Srcnn(SrcnnConfig::default()), scn(16)],
        weight_module: Some(WeightModuleConfig {
            gate: GateActivation::Softmax,
            ..WeightModuleConfig::default()
        }),
    };
    MixtureNetwork::from_seed(&cfg, 17).unwrap()
}

fn info() -> TrainingInfo {
    TrainingInfo {
        iteration: 1234,
        scale: 2,
    }
}

/// Splits a container into (manifest JSON, blob bytes).
fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
    let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest = serde_json::from_slice(&bytes[16..16 + m]).unwrap();
    (manifest, bytes[24 + m..].to_vec())
}

fn assemble(manifest: &serde_json::Value, blob: &[u8], blob_len: u64) -> Vec<u8> {
    let text = serde_json::to_vec(manifest).unwrap();
    let mut out = b"MSCN".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&blob_len.to_le_bytes());
    out.extend_from_slice(blob);
    out
}

fn store_err(bytes: &[u8]) -> StoreError {
    match from_bytes(bytes) {
        Err(Error::Store(e)) => e,
        other => panic!("expected a store error, got {:?}", other.map(|(_, i)| i)),
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.mscn");
    let b = dir.path().join("b.mscn");
    save_model(&mixed(), info(), &a).unwrap();
    let (net, meta) = load_model(&a).unwrap();
    assert_eq!(meta, info());
    save_model(&net, meta, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 2);
}

#[test]
fn round_trip_forward_is_bit_exact() {
    let original = mixed();
    let (loaded, _) = from_bytes(&to_bytes(&original, info())).unwrap();
    assert_eq!(loaded.config(), original.config());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let y = Tensor::<f32>::uniform(Shape::new(2, 1, 13, 11), 0.0, 1.0, &mut rng);
        let a = original.forward(&y).unwrap();
        let b = loaded.forward(&y).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.hr), bits(&b.hr));
        assert_eq!(bits(&a.weight_maps), bits(&b.weight_maps));
    }
}

#[test]
fn blob_is_little_endian_in_manifest_order() {
    let net = mixed();
    let bytes = to_bytes(&net, info());
    let (manifest, blob) = split(&bytes);
    let first = &manifest["tensors"][0];
    assert_eq!(first["name"], "experts.0.feature.weight");
    let mut expected = Vec::new();
    net.visit_params(&mut |_, p| {
        for v in p.value.data() {
            expected.extend_from_slice(&v.to_le_bytes());
        }
    });
    assert_eq!(blob, expected);
    let count: u64 = manifest["tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| {
            t["shape"]
                .as_array()
                .unwrap()
                .iter()
                .map(|d| d.as_u64().unwrap())
                .product::<u64>()
        })
        .sum();
    assert_eq!(4 * count, blob.len() as u64);
}

#[test]
fn manifest_is_readable_without_the_blob() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mscn");
    save_model(&mixed(), info(), &path).unwrap();
    let m = read_manifest(&path).unwrap();
    assert_eq!(m.expert_count, 3);
    assert_eq!(m.training, info());
    assert_eq!(m.mixture.experts[1].kind(), "srcnn");
}

#[test]
fn truncated_blob() {
    let bytes = to_bytes(&mixed(), info());
    let e = store_err(&bytes[..bytes.len() - 4]);
    assert!(matches!(e, StoreError::TruncatedBlob { .. }), "{e}");
    assert!(e.to_string().contains("blob"));
}

#[test]
fn trailing_bytes() {
    let mut bytes = to_bytes(&mixed(), info());
    bytes.extend_from_slice(&[0, 0]);
    assert!(matches!(
        store_err(&bytes),
        StoreError::TrailingBytes { extra: 2 }
    ));
}

#[test]
fn expert_count_disagrees_with_sections() {
    let cfg = MixtureConfig::uniform(3, scn(8));
    let net = MixtureNetwork::from_seed(&cfg, 1).unwrap();
    let (mut manifest, blob) = split(&to_bytes(&net, info()));
    manifest["expert_count"] = 4.into();
    let e = store_err(&assemble(&manifest, &blob, blob.len() as u64));
    match &e {
        StoreError::ManifestInconsistency { field, .. } => assert_eq!(field, "expert_count"),
        other => panic!("{other}"),
    }
}

#[test]
fn bad_magic_and_version() {
    let mut bytes = to_bytes(&mixed(), info());
    bytes[0] = b'X';
    assert!(matches!(store_err(&bytes), StoreError::BadMagic { .. }));
    let mut bytes = to_bytes(&mixed(), info());
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        store_err(&bytes),
        StoreError::VersionMismatch {
            found: 2,
            supported: 1
        }
    ));
}

#[test]
fn truncated_header_names_the_field() {
    let bytes = to_bytes(&mixed(), info());
    match store_err(&bytes[..12]) {
        StoreError::TruncatedHeader { field, .. } => assert_eq!(field, "manifest_len"),
        other => panic!("{other}"),
    }
    match store_err(&bytes[..40]) {
        StoreError::TruncatedHeader { field, .. } => assert_eq!(field, "manifest"),
        other => panic!("{other}"),
    }
}

#[test]
fn shape_and_byte_count_disagreements() {
    let net = MixtureNetwork::from_seed(&MixtureConfig::uniform(2, scn(8)), 2).unwrap();
    let (manifest, blob) = split(&to_bytes(&net, info()));

    let mut bad_shape = manifest.clone();
    bad_shape["tensors"][1]["shape"][3] = 2.into();
    match store_err(&assemble(&bad_shape, &blob, blob.len() as u64)) {
        StoreError::TensorShape { name, .. } => assert_eq!(name, "experts.0.feature.bias"),
        other => panic!("{other}"),
    }

    let short = &blob[..blob.len() - 8];
    match store_err(&assemble(&manifest, short, short.len() as u64)) {
        StoreError::ByteCount { declared, expected } => {
            assert_eq!(declared + 8, expected);
        }
        other => panic!("{other}"),
    }

    let mut renamed = manifest.clone();
    renamed["tensors"][0]["name"] = "experts.0.nope".into();
    assert!(matches!(
        store_err(&assemble(&renamed, &blob, blob.len() as u64)),
        StoreError::ManifestInconsistency { .. }
    ));

    assert!(matches!(
        store_err(&assemble(&serde_json::json!({"expert_count": 2}), &blob, 0)),
        StoreError::ManifestParse(_)
    ));
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("m.mscn");
    assert!(matches!(
        save_model(&mixed(), info(), &path),
        Err(Error::Io { .. })
    ));
    assert!(matches!(load_model(&path), Err(Error::Io { .. })));
}
