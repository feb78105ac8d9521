mod oracle;

use longtail_core::anno::raster::points_from_flat;
use longtail_core::anno::{
    category_stats, parse_dataset, polygons_to_mask, serialize_dataset, BinaryMask, Bucket, RleMask,
};
use longtail_core::fixture::{gen_fixture, FixtureParams};
use proptest::prelude::*;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..16, 1usize..16).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w)
            .prop_map(move |bits| BinaryMask::from_bits(h, w, bits).unwrap())
    })
}

/// Canonical run lengths: a possibly empty leading background run, then
/// positive runs.
fn counts_strategy() -> impl Strategy<Value = (usize, usize, Vec<u32>)> {
    (0u32..4, prop::collection::vec(1u32..6, 0..12)).prop_flat_map(|(lead, runs)| {
        let mut counts = vec![lead];
        counts.extend(runs);
        let total: u32 = counts.iter().sum();
        let divisors: Vec<usize> = (1..=total.max(1) as usize)
            .filter(|d| (total as usize).is_multiple_of(*d))
            .collect();
        (Just(counts), prop::sample::select(divisors)).prop_map(move |(counts, h)| {
            let total: u32 = counts.iter().sum();
            let w = if total == 0 { 0 } else { total as usize / h };
            (h, w, counts)
        })
    })
}

proptest! {
    #[test]
    fn rle_decode_encode_identity(m in mask_strategy()) {
        let rle = RleMask::encode(&m);
        prop_assert_eq!(rle.decode(), m.clone());
        prop_assert_eq!(rle.area(), m.area());
        prop_assert_eq!(rle.bbox(), m.bbox());
        let text = rle.to_coco_string();
        prop_assert_eq!(RleMask::from_coco_string(m.height(), m.width(), &text).unwrap(), rle);
    }

    #[test]
    fn rle_encode_decode_identity((h, w, counts) in counts_strategy()) {
        prop_assume!(w > 0);
        let rle = RleMask::from_counts(h, w, counts).unwrap();
        prop_assert_eq!(RleMask::encode(&rle.decode()), rle);
    }

    #[test]
    fn rasterization_matches_point_in_polygon(
        coords in prop::collection::vec(-2.0f64..22.0, 6..20),
    ) {
        let n = coords.len() / 2 * 2;
        let flat = &coords[..n];
        let poly = points_from_flat(flat).unwrap();
        let m = polygons_to_mask(std::slice::from_ref(&poly), 18, 20).unwrap();
        let expect = BinaryMask::from_fn(18, 20, |y, x| oracle::pnpoly(&poly, x as f64 + 0.5, y as f64 + 0.5));
        prop_assert_eq!(m, expect);
    }
}

#[test]
fn stats_match_fixture_truth() {
    for (s, zipf, n_images) in [
        (1u64, 1.2, 200usize),
        (2, 0.6, 150),
        (3, 2.0, 500),
        (4, 0.0, 40),
    ] {
        let params = FixtureParams {
            zipf_s: zipf,
            n_images,
            ..FixtureParams::default()
        };
        let fx = gen_fixture(&params, s).unwrap();
        let st = category_stats(&fx.dataset);
        assert_eq!(st.category_fractions, fx.truth.category_fractions);
        assert_eq!(st.instance_fractions, fx.truth.instance_fractions);
        assert_eq!(st.category_counts, fx.truth.bucket_categories);
        assert_eq!(st.instance_counts, fx.truth.bucket_instances);
    }
}

#[test]
fn fixture_json_round_trip() {
    let fx = gen_fixture(
        &FixtureParams {
            n_images: 40,
            n_categories: 10,
            ..FixtureParams::default()
        },
        8,
    )
    .unwrap();
    let text = serialize_dataset(&fx.dataset);
    let back = parse_dataset(&text).unwrap();
    assert_eq!(back.images(), fx.dataset.images());
    assert_eq!(back.categories(), fx.dataset.categories());
    assert_eq!(back.annotations(), fx.dataset.annotations());
    assert_eq!(serialize_dataset(&back), text);
}

#[test]
fn bucket_thresholds() {
    let cases = [
        (0, Bucket::Rare),
        (10, Bucket::Rare),
        (11, Bucket::Common),
        (100, Bucket::Common),
        (101, Bucket::Frequent),
    ];
    for (n, b) in cases {
        assert_eq!(Bucket::from_image_count(n), b);
    }
}
