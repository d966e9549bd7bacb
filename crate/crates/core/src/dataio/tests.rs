use std::fs;

use super::*;
use crate::baseline::GlobalDirection;
use crate::controller::Controller;
use crate::error::Error;
use crate::eval::CvReport;
use crate::latent::{generate_pairs, AttributeHyperplane, LatentWorld, WorldConfig};
use crate::model::{synth_basis, ParamDims};

fn dataset(n: usize) -> DatasetContainer<f64> {
    let world = LatentWorld::<f64>::new(&WorldConfig::default()).unwrap();
    let h = AttributeHyperplane::from_truth(&world.attributes[1]);
    let pairs = generate_pairs(&world, &h, "young", n, 21).unwrap();
    let dims = ParamDims { k_id: 16, k_expr: 8, k_tex: 16 };
    DatasetContainer {
        manifest: DatasetManifest::describe(&world, &h, dims, 21, n, GenerationMode::Direct),
        pairs,
    }
}

fn f32_round(x: f64) -> f64 {
    f64::from(x as f32)
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(100);
    save_dataset(dir.path(), &data).unwrap();
    let back: DatasetContainer<f64> = load_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, data.manifest);
    for (a, b) in data.pairs.iter().zip(&back.pairs) {
        assert_eq!(a.id, b.id);
        assert_eq!(f32_round(a.s_pos).to_bits(), b.s_pos.to_bits());
        for (x, y) in a.p_neg.iter().zip(&b.p_neg) {
            assert_eq!(f32_round(*x).to_bits(), y.to_bits());
        }
    }
    // A second generation of files is byte-identical.
    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(dir2.path(), &back).unwrap();
    for name in ["manifest.json", "id.u64", "w_proj.f32", "s_pos.f32", "s_neg.f32", "p_pos.f32", "p_neg.f32"] {
        assert_eq!(fs::read(dir.path().join(name)).unwrap(), fs::read(dir2.path().join(name)).unwrap(), "{name}");
    }
    let again: DatasetContainer<f64> = load_dataset(dir2.path()).unwrap();
    assert_eq!(again, back);
}

#[test]
fn truncated_array_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &dataset(10)).unwrap();
    let path = dir.path().join("p_pos.f32");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    match load_dataset::<f64>(dir.path()) {
        Err(e @ Error::Truncated { .. }) => assert!(e.to_string().contains("p_pos.f32"), "{e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_manifest_dimension_cites_both_values() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &dataset(10)).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).unwrap().replace("\"k_tex\": 16", "\"k_tex\": 17");
    fs::write(&mpath, text).unwrap();
    match load_dataset::<f64>(dir.path()) {
        Err(e @ Error::Manifest { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("41") && msg.contains("40"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &dataset(4)).unwrap();
    let mpath = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
    fs::write(&mpath, text).unwrap();
    assert!(matches!(load_dataset::<f64>(dir.path()), Err(Error::Version { found: 9, .. })));
}

#[test]
fn reference_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = ReferenceContainer {
        seed: 3,
        latents: vec![vec![0.5f64, -1.0], vec![2.0, 0.25]],
        params: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
    };
    save_reference(dir.path(), &r).unwrap();
    assert_eq!(load_reference::<f64>(dir.path()).unwrap(), r);
}

fn weight_payloads() -> Vec<Payload<f64>> {
    let mut c = Controller::<f64>::new("young", 5, &[7, 3], true, 2).unwrap();
    let mut flat = c.params_flat();
    flat.iter_mut().enumerate().for_each(|(i, x)| *x += (i as f64).sin() * 1e-3 + 1.0 / 3.0);
    c.set_params_flat(&flat).unwrap();
    vec![
        Payload::Controller(c),
        Payload::Direction(GlobalDirection {
            attribute: "male".into(),
            p_hat: vec![0.1, -0.7, std::f64::consts::PI],
            scale_alpha: 1.0 / 7.0,
            center: vec![1e-300, 5.0, -0.0],
            train_seed: 42,
            train_size: 16000,
        }),
        Payload::Hyperplane(AttributeHyperplane {
            attribute: "chubby".into(),
            u_hat: vec![0.6, 0.8],
            b_hat: -0.125,
            train_accuracy: 0.999,
        }),
    ]
}

#[test]
fn weight_container_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (i, p) in weight_payloads().into_iter().enumerate() {
        let path = dir.path().join(format!("w{i}.bin"));
        save_weights(&path, &p).unwrap();
        let back: Payload<f64> = load_weights(&path).unwrap();
        assert_eq!(encode_weights(&back), encode_weights(&p));
        assert_eq!(back, p);
        assert_eq!(&fs::read(&path).unwrap()[..4], b"M3DM");
    }
}

#[test]
fn damaged_weight_containers_fail() {
    let p = &weight_payloads()[0];
    let bytes = encode_weights(p);
    let path = std::path::Path::new("w.bin");
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_weights::<f64>(&bad, path), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(decode_weights::<f64>(&bad, path), Err(Error::Version { found: 2, .. })));
    assert!(matches!(decode_weights::<f64>(&bytes[..bytes.len() - 8], path), Err(Error::Truncated { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_weights::<f64>(&long, path), Err(Error::Format { .. })));
}

#[test]
fn significant_digit_formatting() {
    assert_eq!(format_sig(0.0, 6), "0");
    assert_eq!(format_sig(1.0, 6), "1");
    assert_eq!(format_sig(-0.5, 6), "-0.5");
    assert_eq!(format_sig(1.0 / 3.0, 6), "0.333333");
    assert_eq!(format_sig(123456.7, 6), "123457");
    assert_eq!(format_sig(1234567.0, 6), "1.23457e+06");
    assert_eq!(format_sig(1.5e-7, 6), "1.5e-07");
    assert_eq!(format_sig(9.9999996, 6), "10");
}

#[test]
fn single_triangle_obj() {
    let shape = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let tex = [0.5, 0.5, 0.5, 1.5, 0.0, 0.0, 0.0, 0.0, -1.0];
    let s = obj_string(&shape, &tex, &[[0, 1, 2]]).unwrap();
    assert_eq!(s, "v 0 0 0 0.5 0.5 0.5\nv 1 0 0 1 0 0\nv 0 1 0 0 0 0\nf 1 2 3\n");
    assert!(obj_string(&[f64::NAN, 0.0, 0.0], &[0.0; 3], &[]).is_err());
    assert!(obj_string(&shape, &tex, &[[0, 1, 3]]).is_err());
}

#[test]
fn obj_reparse_and_index_range() {
    let basis = synth_basis::<f64>(1, 162, 4, 2, 4).unwrap();
    let shape = basis.eval_shape(&[0.3; 4], &[0.1; 2]).unwrap();
    let tex = basis.eval_texture(&[0.0; 4]).unwrap();
    let text = obj_string(&shape, &tex, &basis.triangles).unwrap();
    assert_eq!(text, obj_string(&shape, &tex, &basis.triangles).unwrap());
    let mut coords = Vec::new();
    let mut idx = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => coords.extend(it.take(3).map(|x| x.parse::<f64>().unwrap())),
            Some("f") => idx.extend(it.map(|x| x.parse::<usize>().unwrap())),
            _ => panic!("{line}"),
        }
    }
    assert_eq!(idx.iter().min(), Some(&1));
    assert_eq!(idx.iter().max(), Some(&162));
    for (a, b) in coords.iter().zip(&shape) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn score_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let basis = synth_basis::<f64>(1, 162, 4, 2, 4).unwrap();
    let c = Controller::<f64>::new("male", 10, &[8, 8], true, 1).unwrap();
    let p: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
    let files = export_score_sweep(&c, &p, &default_sweep_scores(), &basis, dir.path()).unwrap();
    assert_eq!(files.len(), 9);
    assert!(files[0].ends_with("sweep_male_-2.0.obj"));
    let zero = fs::read(dir.path().join("sweep_male_0.0.obj")).unwrap();
    let src = dir.path().join("src.obj");
    export_params_obj(&basis, &p, &src).unwrap();
    assert_eq!(zero, fs::read(&src).unwrap());

    let files = export_score_sweep(&c, &p, &[0.3, -1.25, 7.0], &basis, dir.path()).unwrap();
    assert_eq!(files.len(), 3);
    assert!(export_score_sweep(&c, &p, &[1.0, 1.0], &basis, dir.path()).is_err());
}

#[test]
fn l2_table_layout() {
    let r = |m: &str, a: &str, g: f64| CvReport {
        attribute: a.into(),
        method: m.into(),
        fold_l2: vec![g],
        grand_mean: g,
        fold_sizes: vec![(4, 1)],
        direction: String::new(),
    };
    let reports = vec![
        r(METHOD_BASELINE, "male", 2.0),
        r(METHOD_BASELINE, "young", 4.0),
        r(METHOD_NO_RESIDUAL, "male", 1.5),
        r(METHOD_NO_RESIDUAL, "young", 1.0),
        r(METHOD_RESIDUAL, "male", 1.0),
        r(METHOD_RESIDUAL, "young", 0.5),
    ];
    let t = l2_table(&reports);
    let lines: Vec<&str> = t.lines().collect();
    assert_eq!(lines[0], "L2\tmale\tyoung\tmean");
    assert_eq!(lines[1], "Baseline\t2.0000\t4.0000\t3.0000");
    assert_eq!(lines[2], "Ours w.o.res\t1.5000\t1.0000\t1.2500");
    assert_eq!(lines[3], "Ours\t1.0000\t0.5000\t0.7500");
}
