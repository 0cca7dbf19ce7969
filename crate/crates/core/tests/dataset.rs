mod common;

use common::sequences::*;
use proptest::prelude::*;
use skytemp::dataset::synth::ground_band_rows;
use skytemp::dataset::{
    crop_region, load_manifest, read_image, split_single_image, synth_generate, BoundingBox, Region, SkyMask,
    SynthConfig,
};
use skytemp::nn::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn hour_slot_matches_brute_force(caps in captures(), hour in 8u32..15) {
        check_hour_slot(&records_from(&caps), hour)?;
    }

    #[test]
    fn hour_slot_ignores_order_and_is_idempotent(caps in captures(), hour in 8u32..15, seed: u64) {
        check_order_and_idempotence(&records_from(&caps), hour, seed)?;
    }

    #[test]
    fn window_counts_match_enumeration(caps in captures(), n in 2usize..5) {
        check_windows(&records_from(&caps), &[9, 10, 11, 12], n)?;
    }

    #[test]
    fn no_held_out_image_reaches_training(caps in captures(), n in 2usize..5, test_slot in 9u32..13) {
        check_leakage(&records_from(&caps), &[9, 10, 11, 12], n, test_slot)?;
    }

    #[test]
    fn single_image_folds_partition(caps in captures(), k in 2usize..7, seed: u64) {
        let records = records_from(&caps);
        let mut tested = Vec::new();
        for fold in 0..k {
            let (train, test) = split_single_image(&records, k, fold, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), records.len());
            prop_assert!(test.iter().all(|r| !train.contains(r)));
            prop_assert_eq!(split_single_image(&records, k, fold, seed).unwrap(), (train, test.clone()));
            tested.extend(test);
        }
        tested.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        let mut all = records.clone();
        all.sort_by(|a, b| a.image_path.cmp(&b.image_path));
        prop_assert_eq!(tested, all);
    }

    #[test]
    fn crop_boxes_match_pixel_scan(
        h in 2usize..14,
        w in 2usize..14,
        bits in prop::collection::vec(any::<bool>(), 14 * 14),
    ) {
        let mask = SkyMask::from_fn("c", w, h, |r, c| bits[r * 14 + c]).unwrap();
        let image = Tensor::<f64>::from_vec(&[3, h, w], (0..3 * h * w).map(|i| i as f64).collect()).unwrap();
        let mut covered_rows = vec![false; h];
        let mut covered_cols = vec![false; w];
        for (region, want) in [(Region::Sky, true), (Region::Ground, false)] {
            let pixels: Vec<(usize, usize)> = (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .filter(|&(r, c)| bits[r * 14 + c] == want)
                .collect();
            match mask.bounding_box(region) {
                Err(_) => prop_assert!(pixels.is_empty()),
                Ok(b) => {
                    let scan = BoundingBox {
                        top: pixels.iter().map(|p| p.0).min().unwrap(),
                        left: pixels.iter().map(|p| p.1).min().unwrap(),
                        bottom: pixels.iter().map(|p| p.0).max().unwrap() + 1,
                        right: pixels.iter().map(|p| p.1).max().unwrap() + 1,
                    };
                    prop_assert_eq!(b, scan);
                    covered_rows[b.top..b.bottom].iter_mut().for_each(|x| *x = true);
                    covered_cols[b.left..b.right].iter_mut().for_each(|x| *x = true);
                    let crop = crop_region(&image, &mask, region).unwrap();
                    prop_assert_eq!(crop.shape(), &[3, b.height(), b.width()]);
                    let (r, c) = (b.bottom - 1, b.right - 1);
                    let got = crop.data()[2 * b.height() * b.width() + (r - b.top) * b.width() + (c - b.left)];
                    prop_assert_eq!(got, image.data()[2 * h * w + r * w + c]);
                }
            }
        }
        prop_assert!(covered_rows.iter().all(|&x| x) && covered_cols.iter().all(|&x| x));
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn ground_brightness_tracks_frost() {
    let dir = tempfile::tempdir().unwrap();
    let config = SynthConfig {
        num_cameras: 1,
        days: 365,
        slots: vec![11],
        image_size: 16,
        seed: 21,
        base_range: (0.0, 3.0),
        amplitude_range: (10.0, 14.0),
        ..SynthConfig::default()
    };
    let out = synth_generate(&config, dir.path()).unwrap();
    let records = load_manifest(&out.manifest_path).unwrap().records;
    assert_eq!(records.len(), 365);
    let rows = ground_band_rows(16);
    let (mut brightness, mut frost) = (Vec::new(), Vec::new());
    for r in &records {
        let img = read_image(&r.image_path).unwrap();
        let d = img.data();
        let band: Vec<f64> = (0..3)
            .flat_map(|c| rows.clone().flat_map(move |y| (0..16).map(move |x| c * 256 + y * 16 + x)))
            .map(|i| f64::from(d[i]))
            .collect();
        brightness.push(band.iter().sum::<f64>() / band.len() as f64);
        frost.push(if r.temperature_c < 0.0 { 1.0 } else { 0.0 });
    }
    let frosty = frost.iter().sum::<f64>();
    assert!(frosty > 20.0 && frosty < 345.0, "{frosty} frost days");
    let rho = pearson(&brightness, &frost);
    assert!(rho > 0.8, "correlation {rho}");
}

#[test]
fn generated_logs_exercise_the_properties() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    use skytemp::dataset::{build_sequences, select_slots};

    let mut runner = TestRunner::deterministic();
    let (mut windows, mut shared) = (0, 0);
    for _ in 0..64 {
        let records = records_from(&captures().new_tree(&mut runner).unwrap().current());
        let picks = select_slots(&records, &[10, 11], MAX_DEV).unwrap();
        windows += build_sequences(&picks, 3).unwrap().len();
        let at_11: Vec<_> = picks.iter().filter(|p| p.hour == 11).map(|p| &p.record.image_path).collect();
        shared += picks.iter().filter(|p| p.hour == 10 && at_11.contains(&&p.record.image_path)).count();
    }
    assert!(windows > 100, "{windows} windows");
    assert!(shared > 10, "{shared} images picked for two slots");
}
