use gctx_numerics::{Rng, Tensor};
use gctx_unet::data::*;
use gctx_unet::objectives::{dsc, LabelMask};
use gctx_unet::Error;
use proptest::prelude::*;

fn synth(seed: u64) -> Dataset {
    generate_synthetic(8, 64, 3, &mut Rng::new(seed)).unwrap()
}

#[test]
fn synthetic_set_covers_all_labels() {
    let d = synth(0);
    assert_eq!(d.len(), 8);
    let mut seen = [false; 3];
    for s in &d.samples {
        assert_eq!(s.image.shape(), &[3, 64, 64]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for &v in s.mask.data() {
            seen[v as usize] = true;
        }
    }
    assert_eq!(seen, [true; 3]);
}

#[test]
fn synthetic_set_is_deterministic() {
    assert_eq!(synth(4), synth(4));
    assert_ne!(synth(4), synth(5));
}

#[test]
fn every_generated_foreground_shape_is_visible() {
    for k in [2, 3, 5, 9] {
        let d = generate_synthetic(6, 48, k, &mut Rng::new(k as u64)).unwrap();
        for s in &d.samples {
            let counts = s.mask.class_counts(k);
            let fg: Vec<usize> = (1..k).filter(|&c| counts[c] > 0).collect();
            assert!(!fg.is_empty() && fg.len() < k, "{:?}", counts);
        }
    }
}

#[test]
fn intensity_tracks_label() {
    let d = synth(1);
    let s = &d.samples[0];
    let mut sums = [0.0f64; 3];
    let counts = s.mask.class_counts(3);
    for (p, &l) in s.mask.data().iter().enumerate() {
        sums[l as usize] += s.image.data()[p] as f64;
    }
    let means: Vec<f64> = (0..3).filter(|&c| counts[c] > 0).map(|c| sums[c] / counts[c] as f64).collect();
    assert!(means.windows(2).all(|w| w[0] < w[1]), "{means:?}");
}

#[test]
fn nseg_round_trip_all_dtypes() {
    let mut rng = Rng::new(2);
    let cases = [
        NsegTensor::F32(Tensor::randn(&[2, 3, 4], 1.0, &mut rng)),
        NsegTensor::F64(Tensor::randn(&[5], 1.0, &mut rng)),
        NsegTensor::U8 { shape: vec![3, 2], data: vec![0, 1, 2, 3, 4, 255] },
    ];
    for t in cases {
        let bytes = t.encode();
        assert_eq!(&bytes[..4], b"NSEG");
        assert_eq!(&bytes[4..8], &[0, 0, 0, 1]);
        assert_eq!(u32::from_be_bytes(bytes[12..16].try_into().unwrap()) as usize, t.shape().len());
        assert_eq!(NsegTensor::decode(&bytes).unwrap(), t);
    }
}

#[test]
fn nseg_layout_is_big_endian_header_little_endian_data() {
    let t = NsegTensor::F32(Tensor::new(&[1, 2], vec![1.0, -2.0]).unwrap());
    let b = t.encode();
    assert_eq!(&b[8..12], &[0, 0, 0, 1]);
    assert_eq!(&b[16..20], &[0, 0, 0, 1]);
    assert_eq!(&b[20..24], &[0, 0, 0, 2]);
    assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
    assert_eq!(b.len(), 32);
    assert!(matches!(NsegTensor::decode(&b[..30]), Err(Error::Integrity(_))));
    let mut v = b.clone();
    v[7] = 9;
    assert!(matches!(NsegTensor::decode(&v), Err(Error::Version { found: 9, .. })));
}

#[test]
fn write_then_load_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth(0);
    let manifest = d.write(dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back, d);
    assert_eq!(load_dataset(&manifest).unwrap(), back);
}

#[test]
fn missing_file_names_the_id() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(0).write(dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("masks/case0003.nseg")).unwrap();
    match load_dataset(&manifest) {
        Err(Error::MissingFile { id, .. }) => assert_eq!(id, "case0003"),
        other => panic!("expected missing-file error, got {other:?}"),
    }
}

#[test]
fn out_of_range_label_and_shape_mismatch_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(0).write(dir.path()).unwrap();
    NsegTensor::U8 { shape: vec![64, 64], data: vec![7; 64 * 64] }.write(dir.path().join("masks/case0001.nseg")).unwrap();
    let e = load_dataset(&manifest).unwrap_err().to_string();
    assert!(e.contains("case0001") && e.contains("K=3"), "{e}");

    let manifest = synth(0).write(dir.path()).unwrap();
    NsegTensor::U8 { shape: vec![32, 64], data: vec![0; 32 * 64] }.write(dir.path().join("masks/case0002.nseg")).unwrap();
    let e = load_dataset(&manifest).unwrap_err().to_string();
    assert!(e.contains("case0002"), "{e}");
}

#[test]
fn large_source_is_resized_and_keeps_label_set() {
    let dir = tempfile::tempdir().unwrap();
    let big = generate_synthetic(2, 512, 4, &mut Rng::new(8)).unwrap();
    let mut manifest_path = big.write(dir.path()).unwrap();
    let mut m = Manifest::read(&manifest_path).unwrap();
    m.size = 224;
    manifest_path = dir.path().join("resized.txt");
    std::fs::write(&manifest_path, m.to_text()).unwrap();
    let small = load_dataset(&manifest_path).unwrap();
    for (a, b) in big.samples.iter().zip(&small.samples) {
        assert_eq!(b.size(), (224, 224));
        assert_eq!(b.image.shape(), &[3, 224, 224]);
        let labels = |m: &LabelMask| (0..4).filter(|&c| m.class_counts(4)[c] > 0).collect::<Vec<_>>();
        assert_eq!(labels(&a.mask), labels(&b.mask));
    }
}

#[test]
fn manifest_errors_are_listed_together() {
    let e = Manifest::parse("classes = x\nbogus = 1\na b\n", ".").unwrap_err();
    let Error::Config(msgs) = e else { panic!() };
    assert_eq!(msgs.len(), 4, "{msgs:?}");
}

#[test]
fn batch_sizes_and_order() {
    let mut rng = Rng::new(0);
    let plan = batch_plan(10, 4, false, &mut rng).unwrap();
    assert_eq!(plan.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    assert_eq!(plan.concat(), (0..10).collect::<Vec<_>>());
    assert!(matches!(batch_plan(0, 4, false, &mut rng), Err(Error::Usage(_))));

    let a = epoch_plan(10, 3, true, 7, 2).unwrap();
    assert_eq!(a, epoch_plan(10, 3, true, 7, 2).unwrap());
    assert_ne!(a, epoch_plan(10, 3, true, 7, 3).unwrap());
    let mut flat = a.concat();
    flat.sort();
    assert_eq!(flat, (0..10).collect::<Vec<_>>());
}

#[test]
fn batches_collate_in_plan_order() {
    let d = synth(0);
    let got: Vec<_> = batches(&d, 3, false, &mut Rng::new(0)).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(got.len(), 3);
    assert_eq!(got[2].0.shape(), &[2, 3, 64, 64]);
    assert_eq!(got[2].1.shape(), &[2, 64, 64]);
    assert_eq!(got[1].1.plane(0), d.samples[3].mask);
}

#[test]
fn double_hflip_is_identity_and_rot90_four_times_too() {
    let s = synth(0).samples.remove(0);
    let h = Flips { hflip: true, ..Default::default() };
    assert_eq!(h.apply_sample(&h.apply_sample(&s)), s);
    let r = Flips { rot90: 1, ..Default::default() };
    let mut x = s.clone();
    for _ in 0..4 {
        x = r.apply_sample(&x);
    }
    assert_eq!(x, s);
}

#[test]
fn rot90_moves_corners_counterclockwise() {
    let m = LabelMask::new(&[2, 3], vec![1, 0, 2, 0, 0, 0]).unwrap();
    let r = Flips { rot90: 1, ..Default::default() }.apply_mask(&m);
    assert_eq!(r.shape(), &[3, 2]);
    assert_eq!(r.data(), &[2, 0, 0, 0, 1, 0]);
}

#[test]
fn nearest_resize_source_index() {
    let m = LabelMask::from_fn(4, 4, |y, x| (y * 4 + x) as u8);
    let r = resize_nearest(&m, 2, 2);
    assert_eq!(r.data(), &[5, 7, 13, 15]);
    let up = resize_nearest(&m, 8, 8);
    assert_eq!(up.get(0, 0), 0);
    assert_eq!(up.get(7, 7), 15);
    assert_eq!(up.get(3, 4), 6);
}

fn small_sample() -> impl Strategy<Value = (SegSample, LabelMask)> {
    (1usize..9, 1usize..9).prop_flat_map(|(h, w)| {
        (
            proptest::collection::vec(0.0f32..1.0, 2 * h * w),
            proptest::collection::vec(0u8..4, h * w),
            proptest::collection::vec(0u8..4, h * w),
        )
            .prop_map(move |(img, m, t)| {
                let s = SegSample::new(
                    "p",
                    Tensor::new(&[2, h, w], img).unwrap(),
                    LabelMask::new(&[h, w], m).unwrap(),
                    [1.0, 1.0],
                )
                .unwrap();
                (s, LabelMask::new(&[h, w], t).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmentation_keeps_pixels_with_labels((s, t) in small_sample(), seed in 0u64..1000) {
        let f = Flips::draw(&mut Rng::new(seed));
        let a = f.apply_sample(&s);
        let (h, w) = s.size();
        let hw = h * w;
        // every (intensity, label) pair survives co-located
        let mut before: Vec<(u32, u32, u8)> = (0..hw)
            .map(|p| (s.image.data()[p].to_bits(), s.image.data()[hw + p].to_bits(), s.mask.data()[p]))
            .collect();
        let mut after: Vec<(u32, u32, u8)> = (0..hw)
            .map(|p| (a.image.data()[p].to_bits(), a.image.data()[hw + p].to_bits(), a.mask.data()[p]))
            .collect();
        before.sort();
        after.sort();
        prop_assert_eq!(before, after);
        prop_assert_eq!(a.mask.class_counts(4), s.mask.class_counts(4));
        let ta = f.apply_mask(&t);
        for k in 0..4 {
            prop_assert_eq!(dsc(&a.mask, &ta, k).unwrap(), dsc(&s.mask, &t, k).unwrap());
        }
    }

    #[test]
    fn nearest_resize_never_invents_labels(
        (h, w) in (1usize..20, 1usize..20),
        (oh, ow) in (1usize..40, 1usize..40),
        seed in 0u64..1000,
    ) {
        let mut rng = Rng::new(seed);
        let m = LabelMask::from_fn(h, w, |_, _| rng.below(6) as u8);
        let r = resize_nearest(&m, oh, ow);
        let src = m.class_counts(6);
        for (c, &n) in r.class_counts(6).iter().enumerate() {
            prop_assert!(n == 0 || src[c] > 0);
        }
    }
}
