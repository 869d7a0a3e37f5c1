//! Property checks shared by the proptest suites and the acceptance run.
#![allow(dead_code)]

use std::sync::OnceLock;

use densee::densee::detect_corners;
use densee::io::{Tensor, TensorData};
use densee::metrics::{hausdorff_direction_distance, lift_bins};
use densee::radon::{canonical_map, inverse_canonical_map, FULL_ANGLES};
use densee::shearlet::{ShearletConfig, ShearletSystem};
use densee::wavefront::WavefrontSet;
use densee::Image;
use proptest::collection::{btree_set, vec};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const SHEARLET_SIDE: usize = 32;
pub const CANON_SIDE: usize = 16;

pub fn system32() -> &'static ShearletSystem {
    static SYS: OnceLock<ShearletSystem> = OnceLock::new();
    SYS.get_or_init(|| ShearletSystem::build(ShearletConfig::standard(SHEARLET_SIDE).unwrap()).unwrap())
}

pub fn image(side: usize) -> impl Strategy<Value = Image> {
    vec(-1.0f64..1.0, side * side).prop_map(move |v| Image::from_vec(side, side, v).unwrap())
}

/// Sparse wavefront set on a `rows × cols` frame.
pub fn sparse_set(rows: usize, cols: usize, max: usize) -> impl Strategy<Value = WavefrontSet> {
    vec((0..rows, 0..cols, 0..180usize), 0..max).prop_map(move |entries| {
        let mut wf = WavefrontSet::empty(rows, cols);
        for (i, j, b) in entries {
            wf.set(i, j, b);
        }
        wf
    })
}

pub fn bin_set() -> impl Strategy<Value = Vec<usize>> {
    btree_set(0..180usize, 1..6).prop_map(|s| s.into_iter().collect())
}

pub fn tensor() -> impl Strategy<Value = Tensor> {
    (vec(0..5usize, 0..4), 0..3u8, any::<u64>()).prop_map(|(dims, code, seed)| {
        let n: usize = dims.iter().product();
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let data = match code {
            0 => TensorData::U8((0..n).map(|_| next() as u8).collect()),
            1 => TensorData::F32((0..n).map(|_| f32::from_bits(next() as u32)).collect()),
            _ => TensorData::F64((0..n).map(|_| f64::from_bits(next())).collect()),
        };
        Tensor::new(dims, data).unwrap()
    })
}

pub fn translation_covariance(img: &Image, di: isize, dj: isize) -> Result<(), TestCaseError> {
    let sys = system32();
    let a = sys.transform(&img.circshift(di, dj)).unwrap();
    let b = sys.transform(img).unwrap();
    for c in 0..sys.channel_count() {
        let shifted = b.channel_image(c).circshift(di, dj);
        let diff = a
            .channel(c)
            .iter()
            .zip(shifted.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        prop_assert!(diff < 1e-10, "channel {} differs by {}", c, diff);
    }
    Ok(())
}

pub fn canonical_union(x1: &WavefrontSet, x2: &WavefrontSet) -> Result<(), TestCaseError> {
    let joint = canonical_map(&x1.union(x2).unwrap()).unwrap();
    let split = canonical_map(x1).unwrap().union(&canonical_map(x2).unwrap()).unwrap();
    prop_assert_eq!(&joint, &split);
    Ok(())
}

pub fn inverse_canonical_union(y1: &WavefrontSet, y2: &WavefrontSet) -> Result<(), TestCaseError> {
    prop_assert_eq!(y1.cols(), FULL_ANGLES);
    let joint = inverse_canonical_map(&y1.union(y2).unwrap()).unwrap();
    let split = inverse_canonical_map(y1).unwrap().union(&inverse_canonical_map(y2).unwrap()).unwrap();
    prop_assert_eq!(&joint, &split);
    Ok(())
}

pub fn hausdorff_axioms(a: &[usize], b: &[usize], c: &[usize]) -> Result<(), TestCaseError> {
    let (la, lb, lc) = (lift_bins(a), lift_bins(b), lift_bins(c));
    let d = hausdorff_direction_distance;
    prop_assert!(d(&la, &la).abs() < 1e-12);
    prop_assert!((d(&la, &lb) - d(&lb, &la)).abs() < 1e-12);
    prop_assert!(d(&la, &lc) <= d(&la, &lb) + d(&lb, &lc) + 1e-12);
    if a != b {
        prop_assert!(d(&la, &lb) > 1e-6);
    }
    Ok(())
}

/// A pixel is a corner iff two of its bins are more than 10 apart mod 180.
pub fn corner_rule(bins: &[usize]) -> Result<(), TestCaseError> {
    let mut wf = WavefrontSet::empty(1, 1);
    bins.iter().for_each(|&b| wf.set(0, 0, b));
    let expected = bins.iter().any(|&a| {
        bins.iter().any(|&b| {
            let d = a.abs_diff(b);
            d.min(180 - d) > 10
        })
    });
    prop_assert_eq!(!detect_corners(&wf).is_empty(), expected, "bins {:?}", bins);
    Ok(())
}

pub fn tensor_round_trip(t: &Tensor) -> Result<(), TestCaseError> {
    let mut first = Vec::new();
    t.write_to(&mut first).unwrap();
    let back = Tensor::read_from(&mut first.as_slice()).unwrap();
    let mut second = Vec::new();
    back.write_to(&mut second).unwrap();
    prop_assert_eq!(first, second);
    prop_assert_eq!(back.dims(), t.dims());
    Ok(())
}
