use kernelviz::adapters::{save_reference, AdapterRegistry, AdapterSpec};
use kernelviz_core::net::{direction_tuning, STANDARD_DIRECTIONS};
use kernelviz_core::{KernelRef, NetworkAdapter, ReferenceNet};

#[test]
fn checkpoint_round_trip_keeps_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = ReferenceNet::standard(4).unwrap();
    save_reference(&net, &path).unwrap();
    let spec = AdapterSpec {
        name: "reference".into(),
        checkpoint: Some(path.clone()),
        net_seed: 999,
    };
    let loaded = AdapterRegistry::default().open(&spec).unwrap();
    assert_eq!(loaded.weights_digest(), net.weights_digest());
    let back = kernelviz::adapters::load_reference(&path).unwrap();
    assert_eq!(back, net);
    for (ch, &theta) in STANDARD_DIRECTIONS.iter().enumerate() {
        let k: KernelRef = format!("layer1/{ch}").parse().unwrap();
        let curve = direction_tuning(loaded.as_ref(), &k, 0.1, 1.0, 16).unwrap();
        let best = (0..16).max_by(|&a, &b| curve[a].total_cmp(&curve[b])).unwrap();
        assert_eq!(best as f64 * 22.5, theta);
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    std::fs::write(&path, "{\"stack\": 1}").unwrap();
    let spec = AdapterSpec {
        name: "reference".into(),
        checkpoint: Some(path),
        net_seed: 0,
    };
    let err = AdapterRegistry::default().open(&spec).err().unwrap().to_string();
    assert!(err.contains("net.json"), "{err}");
}

#[test]
fn plugins_can_be_registered() {
    fn tiny(_: Option<&std::path::Path>, seed: u64) -> kernelviz::Result<kernelviz::adapters::SharedAdapter> {
        let mut rng = kernelviz_core::RandomSource::new(seed);
        Ok(Box::new(ReferenceNet::random(1, &[2], &mut rng)?))
    }
    let mut r = AdapterRegistry::default();
    r.register("tiny", tiny);
    assert_eq!(r.names(), ["reference", "tiny"]);
    let a = r
        .open(&AdapterSpec {
            name: "tiny".into(),
            checkpoint: None,
            net_seed: 1,
        })
        .unwrap();
    assert_eq!(a.input_spec().channels, 1);
}
