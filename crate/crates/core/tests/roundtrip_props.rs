use brainmark_core::augment::{chain_for_sample, AugmentConfig};
use brainmark_core::landmarks::{landmarks_to_json, parse_landmarks, table1_subanatomy};
use brainmark_core::volume::{decode_volume, encode_volume};
use brainmark_core::{Landmark, LandmarkSet, Volume3};
use proptest::prelude::*;
use std::path::Path;

fn dims() -> impl Strategy<Value = [usize; 3]> {
    proptest::array::uniform3(1usize..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_bytes_round_trip(d in dims(), spacing in proptest::array::uniform3(0.1f32..4.0), seed in any::<u64>()) {
        let n = d[0] * d[1] * d[2];
        let data: Vec<f32> = (0..n as u64).map(|i| f32::from_bits((seed ^ i.wrapping_mul(0x9E37_79B9)) as u32 & 0x7F7F_FFFF)).collect();
        let v = Volume3::new(d, spacing, data).unwrap();
        let back = decode_volume(&encode_volume(&v).unwrap(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.dims(), d);
        prop_assert_eq!(back.spacing(), spacing);
        prop_assert_eq!(back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn landmark_json_is_value_exact(pts in proptest::collection::vec((proptest::array::uniform3(0.0f64..1.0), any::<bool>()), 1..12)) {
        let d = [30, 40, 50];
        let points = pts
            .iter()
            .enumerate()
            .map(|(i, (u, oob))| Landmark { oob: *oob, ..Landmark::new(i as u32 + 1, [0, 1, 2].map(|k| u[k] * (d[k] - 1) as f64)) })
            .collect();
        let set = LandmarkSet::new(points).unwrap().with_subanatomy(table1_subanatomy());
        prop_assert_eq!(parse_landmarks(&landmarks_to_json(&set, d), d).unwrap(), set);
    }

    #[test]
    fn sampled_chains_obey_their_policy(master in any::<u64>(), index in 0usize..1000) {
        let cfg = AugmentConfig::default();
        let chain = chain_for_sample(master, index, [24, 24, 24], &cfg);
        prop_assert!(chain.satisfies_policy());
        prop_assert_eq!(chain_for_sample(master, index, [24, 24, 24], &cfg), chain);
    }
}
