mod common;

use placefit::dataio::{
    generate_synthetic, load_bank, load_dataset, read_bank, save_bank, save_dataset, write_bank, Dataset,
    SynthConfig, ANNOTATIONS_FILE, FRAMES_FILE,
};
use placefit::error::Error;
use placefit::experiment::{build_lap_bank, ExperimentConfig, Prepared, SwatheSize};
use placefit::placebank::SwatheMethod;
use std::sync::OnceLock;

fn default_route() -> &'static Dataset {
    static D: OnceLock<Dataset> = OnceLock::new();
    D.get_or_init(|| generate_synthetic(&SynthConfig::default()).unwrap())
}

#[test]
fn default_route_structure() {
    let d = default_route();
    assert_eq!(d.frames.len(), 600);
    assert_eq!(d.laps(), vec![0, 1]);
    let cfg = SynthConfig::default();
    for lap in d.laps() {
        let idx = d.lap_indices(lap);
        assert_eq!(idx.len(), 300);
        assert!(idx.windows(2).all(|w| {
            let (a, b) = (&d.frames[w[0]], &d.frames[w[1]]);
            a.frame_id < b.frame_id && a.timestamp_us < b.timestamp_us
        }));
        let places: std::collections::BTreeSet<usize> = idx.iter().map(|&i| cfg.place_of_frame(d.frames[i].frame_id)).collect();
        assert_eq!(places.len(), 3);
    }
    let (w, h) = cfg.image_size;
    for boxes in d.annotations.values() {
        for b in boxes {
            assert!(b.x >= 0.0 && b.y >= 0.0 && b.x + b.w <= w as f64 && b.y + b.h <= h as f64, "{b:?}");
        }
    }
    assert!(d.n_annotations() > 0);
    let m = 2 * cfg.positive_margin as u32;
    let (pw, ph) = (cfg.positive_window.0 as u32, cfg.positive_window.1 as u32);
    assert!(d.positives.iter().all(|p| (p.image.width() - m) * ph == (p.image.height() - m) * pw));
}

#[test]
fn cross_lap_poses_pair_up() {
    let d = default_route();
    let cfg = SynthConfig::default();
    let lap0: Vec<_> = d.lap_indices(0).into_iter().map(|i| d.frames[i].pose).collect();
    let mut nearest: Vec<f64> = d
        .lap_indices(1)
        .into_iter()
        .map(|i| {
            let p = d.frames[i].pose;
            lap0.iter().map(|q| (p.x - q.x).hypot(p.y - q.y)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    assert!(nearest.iter().all(|&n| n <= 3.0 * cfg.pose_noise_sigma + 1e-9));
    nearest.sort_by(f64::total_cmp);
    let median = nearest[nearest.len() / 2];
    assert!((median - 0.4).abs() <= 0.08, "median {median}");
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig {
        frames_per_place: 5,
        ..SynthConfig::default()
    };
    let a = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, generate_synthetic(&cfg).unwrap());
    let other = generate_synthetic(&SynthConfig { rng_seed: 1, ..cfg }).unwrap();
    assert_ne!(a.manifest_checksum(), other.manifest_checksum());
}

#[test]
fn dataset_round_trip_is_byte_exact() {
    let d = generate_synthetic(&SynthConfig {
        frames_per_place: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_dataset(&d, a.path()).unwrap();
    let back = load_dataset(a.path()).unwrap();
    assert_eq!(back, d);
    save_dataset(&back, b.path()).unwrap();
    for f in [FRAMES_FILE, ANNOTATIONS_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    let first = &d.frames[0].image_ref;
    assert_eq!(std::fs::read(a.path().join(first)).unwrap(), std::fs::read(b.path().join(first)).unwrap());
}

#[test]
fn corrupt_image_is_a_load_error() {
    let d = generate_synthetic(&SynthConfig {
        frames_per_place: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let path = dir.path().join(&d.frames[2].image_ref);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&path, bytes).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Load { .. }), "{err}");
    assert!(err.to_string().contains(&d.frames[2].image_ref), "{err}");
}

#[test]
fn bank_file_round_trip_and_corruption() {
    let d = generate_synthetic(&SynthConfig {
        frames_per_place: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = ExperimentConfig::synthetic(0);
    let prepared = Prepared::new(&d, &config).unwrap();
    let bank = build_lap_bank(&prepared, 0, SwatheMethod::Temporal, SwatheSize::Frames(2), &config.hnm, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.pfbank");
    save_bank(&bank, &path).unwrap();
    let back = load_bank(&path).unwrap();
    assert_eq!(back, bank);
    assert_eq!(write_bank(&back), std::fs::read(&path).unwrap());

    let bytes = write_bank(&bank);
    for k in [bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[k] ^= 0x40;
        assert!(matches!(read_bank(&bad), Err(Error::Checksum { .. }) | Err(Error::Load { .. })));
    }
    assert!(read_bank(&bytes[..bytes.len() - 3]).is_err());
}
